#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfolio/data_model.hpp"
#include "promptfolio/feature_space.hpp"
#include "promptfolio/linalg.hpp"

namespace promptfolio {

// Coefficients c_f = <p - p0, f>; the component along f is c_f f / |f|^2.
struct CoeffSnapshot {
    int round = 0;
    double beta = 0.0;
    Vec gamma;        // S
    Vec phi;          // L
    Vec psi_acc;      // L, contributions of y = +1 samples
    Vec varphi_acc;   // L, contributions of y = -1 samples
    bool has_acc = false;
    double residual_norm = 0.0;
    double delta_norm = 0.0;
};

CoeffSnapshot decompose(std::span<const double> p, std::span<const double> p0, const FeatureBank& bank,
                        int round = 0);

struct PsiPhiAccumulator {
    Vec psi;
    Vec varphi;

    PsiPhiAccumulator() = default;
    explicit PsiPhiAccumulator(int L) : psi(static_cast<std::size_t>(L), 0.0), varphi(static_cast<std::size_t>(L), 0.0) {}

    // plus/minus: per-noise-row coefficient increments of one step, split by sample label
    void accumulate(std::span<const double> plus, std::span<const double> minus);
    Vec total() const;
};

// Weighted average of accumulators, mirroring FedAvg.
PsiPhiAccumulator average(const std::vector<PsiPhiAccumulator>& accs, const std::vector<double>& weights);

struct CoeffTrajectory {
    std::string id;
    std::vector<CoeffSnapshot> snaps;

    void append(CoeffSnapshot s);
};

struct TrajectorySet {
    CoeffTrajectory server;
    std::vector<CoeffTrajectory> client_global;  // copies after local updates, before aggregation
    std::vector<CoeffTrajectory> client_local;
};

struct DynamicsReport {
    std::vector<int> rounds;
    Vec beta_bar;           // server prompt, mu_G coefficient
    Vec gamma_bar;          // server prompt, mean over clients of the client's own local coefficient
    Vec phi_bar_norm;       // server prompt, l2 norm of noise coefficients
    Vec beta_local_mean;    // local prompts, mean mu_G coefficient
    double predicted_beta_order = 0.0;   // nbar * K * SNR_G^2
    Vec predicted_gamma_order;           // nbar * chi_k * SNR_k^2
    bool signs_ok = true;
    bool early_monotone = true;
    std::vector<std::string> violations;
    int loss_threshold_round = -1;

    nlohmann::json to_json() const;
};

DynamicsReport dynamics_diagnostics(const TrajectorySet& traj, const FeatureBank& bank, const ClientAssignment& a,
                                    double sigma_p, int n_bar, std::span<const double> round_loss = {},
                                    double loss_threshold = 0.1, double tol = 1e-12, int early_rounds = 5);

void write_csv(std::ostream& os, const TrajectorySet& traj);

}  // namespace promptfolio
