#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfolio/data_model.hpp"
#include "promptfolio/encoders.hpp"
#include "promptfolio/training.hpp"

namespace promptfolio {

struct RunConfig {
    int K = 8;
    int S = 8;
    int L = 32;
    int m_p = 64;
    int n_k = 64;
    double norm_global = 0.6;
    double norm_local = 1.0;
    double norm_noise = 4.48;
    double sigma_p = 0.3125;
    std::optional<double> sigma_0;  // default 0.01/sqrt(m_p)
    ClassPromptMode class_mode = ClassPromptMode::aligned;
    double class_scale = 1.0;
    std::optional<double> eta = 4e-4;  // nullopt = halving search
    double eta_start = 1.0;
    int E = 5;
    int R = 50;
    double theta = 0.5;
    std::vector<double> theta_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
    Policy policy;
    std::vector<double> alpha_grid = {0.01, 0.3, 10.0};
    std::vector<int> K_grid = {2, 4, 8};
    std::string n_mode = "fixed_per_client";  // or fixed_total, for the client-count sweep
    std::uint64_t seed = 1;
    int replicates = 3;
    LossMode loss_mode = LossMode::margin;
    int n_test = 4096;
    LabelScheme labels = LabelScheme::balanced;
    int snapshot_every = 1;
    double divergence_bound = 1e6;
    int minibatch = 0;

    double sigma0() const;
};

// Strict: unknown keys and missing required keys (K, S, L, m_p, n_k, sigma_p) raise ConfigError naming the field.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);
void validate(const RunConfig& c);

// Canonical form: every field present, keys sorted. The hash is over its compact dump.
nlohmann::json to_json(const RunConfig& c);
std::string config_hash(const RunConfig& c);
std::string hash_hex(const std::string& text);

// A small configuration that runs in milliseconds, for tests.
RunConfig default_config();

}  // namespace promptfolio
