#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <json.hpp>

#include "promptfolio/data_model.hpp"
#include "promptfolio/encoders.hpp"
#include "promptfolio/feature_space.hpp"

namespace promptfolio {

double normal_cdf(double x);

struct GaussianTestModel {
    double mu = 0.0;
    double sigma = 0.0;
    std::string provenance = "analytic";
};

// Margin model for one local feature s (1-based) against F = h_mix(p_+) - h_mix(p_-).
GaussianTestModel gaussian_model_from_F(std::span<const double> F, int S, int s, double sigma_p);

// Client k's model: mu = F[0] + F[s_k], sigma = sigma_p |F_noise|. For mixture clients, mu is the pi-weighted mean.
GaussianTestModel gaussian_test_params(const EncoderWeights& enc, std::span<const double> p_G,
                                       std::span<const double> p_L, double theta, const ClassPrompts& cp,
                                       const ClientAssignment& a, int k, double sigma_p);

double analytic_error(const GaussianTestModel& model);

// Exact error of client k under the model, averaging over its local-feature distribution.
double analytic_client_error(std::span<const double> F, const Vec& pi, int S, double sigma_p);

struct McEstimate {
    double estimate = 0.0;
    double stderr_ = 0.0;
    long long n = 0;
};

McEstimate mc_error(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L, double theta,
                    const ClassPrompts& cp, const ClientAssignment& a, int k, double sigma_p, long long N,
                    std::uint64_t seed);

double portfolio_ratio(double a, double b, double rho, double theta);

struct ThetaStar {
    double value = 0.0;       // maximiser of portfolio_ratio on [0, 1]
    double raw = 0.0;         // unprojected closed form
    double denominator = 0.0;
    bool interior = false;    // raw lies in (0, 1) and is a maximiser
};

ThetaStar theta_star(double a, double b, double rho);

struct AdvantageInterval {
    double Ca = 0.0, Cb = 0.0, Cc = 0.0;
    double radicand = 0.0;
    bool complex_radicand = false;
    bool degenerate = false;          // Ca == 0
    double upper_closed_form = 0.0;   // proj_[0,1]((Cb - Cc)/(2 Ca)), NaN when undefined
    double upper = 0.0;               // supremum of the set [0, t] on which the advantage holds
    double literal_Ca = 0.0, literal_Cc = 0.0, literal_radicand = 0.0;

    nlohmann::json to_json() const;
};

AdvantageInterval advantage_interval(double a, double b, double rho);

// Does the mixed ratio dominate the linear mix of endpoint ratios at theta? (Sufficient for the error form.)
double advantage_gap(double a, double b, double rho, double theta);

double theta_star_order(int K, double chi_k, double snr_g, double snr_k);

struct AbRho {
    double a = 0.0, b = 0.0, rho = 0.0;
    double mu_G = 0.0, sigma_G = 0.0, mu_L = 0.0, sigma_L = 0.0;
    bool degenerate = false;
    std::string note;
};

// Two assets: the global prompt alone and the local prompt alone, seen from client k.
AbRho estimate_ab_rho(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L,
                      const ClassPrompts& cp, const ClientAssignment& a, int k, double sigma_p);

}  // namespace promptfolio
