#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfolio/config.hpp"
#include "promptfolio/training.hpp"

namespace promptfolio {

struct Experiment {
    Problem prob;
    std::vector<ClientDataset> test;
};

// Everything a run needs, drawn from labelled sub-streams of one seed.
Experiment build_experiment(const RunConfig& cfg, std::uint64_t seed);
TrainConfig train_config(const RunConfig& cfg, double theta, double eta, int jobs = 1);
// Fixed eta from the config, or the halving search when it is "auto".
double resolve_eta(const RunConfig& cfg, const Problem& prob, double theta);

std::uint64_t replicate_seed(const RunConfig& cfg, int rep);

struct ErrorReport {
    Vec per_client;
    std::vector<int> per_client_n;
    double pooled = 0.0;
    double stderr_ = 0.0;
    long long n = 0;
};

// Fraction of test samples with a wrong prediction; a zero similarity gap predicts +1.
ErrorReport empirical_error(const FederationState& state, double theta, const std::vector<ClientDataset>& test,
                            const ClassPrompts& cp, const EncoderWeights& enc);

struct PointResult {
    double theta = 0.0;
    int replicate = 0;
    std::uint64_t seed = 0;
    std::string key;
    double eta = 0.0;
    double emp_error = 0.0;
    double emp_stderr = 0.0;
    double analytic_error = 0.0;
    double a = 0.0, b = 0.0, rho = 0.0;  // client means over non-degenerate clients
    double theta_star = 0.0;
    double advantage_upper = 0.0;
    double chi_mean = 0.0;
    double phi_server_norm = 0.0;
    double phi_client_norm = 0.0;   // mean over clients, pre-aggregation copies at the final round
    bool attenuation_ok = true;     // |phi_bar_l| <= sum_k w_k |phi_k,l|
    bool diverged = false;

    nlohmann::json to_json() const;
    static PointResult from_json(const nlohmann::json& j);
};

PointResult run_point(const RunConfig& cfg, double theta, int rep, int jobs = 1);
std::string point_key(const RunConfig& cfg, double theta, int rep);

struct ThetaCurve {
    Vec theta;
    Vec error;       // mean over replicates
    Vec stderr_;     // pooled binomial stderr of that mean
    Vec analytic;
    std::vector<std::vector<PointResult>> points;  // theta x replicate
    int argmin = 0;
    int argmin_analytic = 0;
    double theta_opt = 0.0;
    double theta_star_mean = 0.0;  // theory prediction averaged over the curve's points
};

struct SweepResult {
    std::string axis;
    Vec grid;
    std::vector<ThetaCurve> curves;
    Vec theta_opt;
    Vec chi_mean;
    Vec order_prediction;
    std::string config_hash;

    nlohmann::json to_json() const;
    void write_csv(std::ostream& os) const;
};

// Lets a caller skip points that were already computed (keyed by point_key).
struct PointStore {
    std::function<std::optional<PointResult>(const std::string&)> load;
    std::function<void(const PointResult&)> save;
};

ThetaCurve theta_curve(const RunConfig& cfg, const Vec& grid, int jobs = 1, const PointStore* store = nullptr);
SweepResult sweep_theta(const RunConfig& cfg, const Vec& grid, int jobs = 1, const PointStore* store = nullptr);
SweepResult sweep_heterogeneity(const RunConfig& cfg, const Vec& alphas, int jobs = 1,
                                const PointStore* store = nullptr);
SweepResult sweep_clients(const RunConfig& cfg, const std::vector<int>& Ks, int jobs = 1,
                          const PointStore* store = nullptr);

struct TrendCheck {
    bool ok = true;
    std::vector<std::string> notes;
};

// Optimal theta must not increase along the sweep; a one-step rise counts as a tie when
// the two errors involved are within their summed standard errors.
TrendCheck check_non_increasing(const SweepResult& sweep);

// Interior minimum beats both endpoints by more than k pooled standard errors.
struct ValleyCheck {
    bool ok = false;
    double interior_min = 0.0;
    double endpoint_min = 0.0;
    double margin = 0.0;
    double needed = 0.0;
};
ValleyCheck check_interior_valley(const ThetaCurve& curve, double k_stderr = 2.0);

}  // namespace promptfolio
