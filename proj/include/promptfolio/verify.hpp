#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptfolio/config.hpp"

namespace promptfolio {

struct SuiteResult {
    std::string name;
    bool pass = false;
    std::string message;  // first failing property, or a one-line summary
    nlohmann::json details;
    double seconds = 0.0;
};

// Analytic gradients against central differences (step 1e-6) on random small problems.
SuiteResult verify_gradients(int n_configs = 50, std::uint64_t seed = 11, double tol = 1e-5);

// Reconstruction residual and psi/phi consistency for every snapshot of one run.
SuiteResult verify_decomposition(const RunConfig& cfg, double theta = 0.5);

// Phi(-mu/sigma) against Monte Carlo on trained and untrained prompts.
SuiteResult verify_gaussian(int n_configs = 20, long long N = 1000000, std::uint64_t seed = 13);

// theta* against a dense grid, on draws with interior roots and on projected draws.
SuiteResult verify_theta_star(int n_interior = 200, std::uint64_t seed = 17);

// Advantage inequality on [0, upper] plus the a=2, b=3, rho=0 substitution.
SuiteResult verify_advantage(int n_draws = 100, std::uint64_t seed = 19);

// theta = 0 equals one FedAvg prompt; theta = 1 equals isolated clients; bitwise on trajectories.
SuiteResult verify_degeneration(const RunConfig& cfg);

// Paired-run growth ratios and boundedness of the aggregated noise coefficients.
SuiteResult verify_dynamics(const RunConfig& cfg);

std::vector<std::string> suite_names();
// "portfolio" runs theta_star and advantage together; "all" runs everything.
std::vector<SuiteResult> run_suite(const std::string& name, const RunConfig& cfg);

}  // namespace promptfolio
