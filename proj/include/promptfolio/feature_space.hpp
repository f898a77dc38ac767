#pragma once

#include <cstdint>
#include <span>

#include <json.hpp>

#include "promptfolio/linalg.hpp"

namespace promptfolio {

struct ClientAssignment;

struct NormSpec {
    double global = 1.0;
    double local = 1.0;
    double noise = 1.0;
};

// Rows are mu_G, nu_1..nu_S, xi_1..xi_L, each in R^{m_p}, mutually orthogonal.
struct FeatureBank {
    int S = 0;
    int L = 0;
    int m_p = 0;
    NormSpec norms;
    std::uint64_t seed = 0;
    Mat rows;

    int m() const { return 1 + S + L; }
    std::span<const double> mu_g() const { return rows.row(0); }
    std::span<const double> nu(int s) const { return rows.row(static_cast<std::size_t>(s)); }  // s in [1, S]
    std::span<const double> xi(int l) const { return rows.row(static_cast<std::size_t>(S + l)); }  // l in [1, L]
    double requested_norm(int r) const;
};

struct EncoderWeights {
    Mat W;
    int m() const { return static_cast<int>(W.rows); }
    int m_p() const { return static_cast<int>(W.cols); }
};

FeatureBank build_feature_bank(int S, int L, int m_p, const NormSpec& norms, std::uint64_t seed);
EncoderWeights assemble_W(const FeatureBank& bank);

// which = 0 for mu_G, which = s in [1, S] for nu_s
double snr(const FeatureBank& bank, double sigma_p, int which);

// Signal overlap of client k (0-based) with the whole federation, in units of its own signal.
double chi(const ClientAssignment& assignment, const FeatureBank& bank, int k);

nlohmann::json to_json(const FeatureBank& bank);
FeatureBank bank_from_json(const nlohmann::json& j);

}  // namespace promptfolio
