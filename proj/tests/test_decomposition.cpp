#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "promptfolio/decomposition.hpp"
#include "promptfolio/errors.hpp"
#include "promptfolio/evaluation.hpp"

using namespace promptfolio;

namespace {

RunConfig small_config() {
    RunConfig c = default_config();
    c.K = 4;
    c.S = 4;
    c.L = 8;
    c.m_p = 16;
    c.n_k = 16;
    c.R = 6;
    c.E = 2;
    c.eta = 0.05;
    c.n_test = 64;
    return c;
}

}  // namespace

TEST_CASE("no movement, no coefficients") {
    const FeatureBank b = build_feature_bank(2, 3, 8, {1, 1, 1}, 1);
    const Vec p0(8, 0.3);
    const CoeffSnapshot s = decompose(p0, p0, b);
    CHECK(s.beta == 0.0);
    for (double x : s.gamma) CHECK(x == 0.0);
    for (double x : s.phi) CHECK(x == 0.0);
    CHECK(s.residual_norm == 0.0);
}

TEST_CASE("single feature step") {
    const FeatureBank b = build_feature_bank(2, 3, 8, {1.7, 1, 1}, 1);
    const Vec p0(8, 0.1);
    Vec p = p0;
    axpy(2.0, b.mu_g(), p);
    const CoeffSnapshot s = decompose(p, p0, b);
    CHECK(s.beta == doctest::Approx(2.0 * 1.7 * 1.7).epsilon(1e-12));
    for (double x : s.gamma) CHECK(std::fabs(x) < 1e-12);
    for (double x : s.phi) CHECK(std::fabs(x) < 1e-12);
}

TEST_CASE("construct then recover") {
    const FeatureBank b = build_feature_bank(3, 4, 10, {0.8, 1.3, 2.1}, 3);
    std::mt19937_64 eng(4);
    std::normal_distribution<double> nd;
    const Vec p0(10, 0.0);
    // five features: mu_G, nu_1, nu_3, xi_2, xi_4
    const double c[5] = {nd(eng), nd(eng), nd(eng), nd(eng), nd(eng)};
    Vec p = p0;
    axpy(c[0], b.mu_g(), p);
    axpy(c[1], b.nu(1), p);
    axpy(c[2], b.nu(3), p);
    axpy(c[3], b.xi(2), p);
    axpy(c[4], b.xi(4), p);
    const CoeffSnapshot s = decompose(p, p0, b);
    auto n2 = [](std::span<const double> v) { return dot(v, v); };
    CHECK(std::fabs(s.beta - c[0] * n2(b.mu_g())) < 1e-10);
    CHECK(std::fabs(s.gamma[0] - c[1] * n2(b.nu(1))) < 1e-10);
    CHECK(std::fabs(s.gamma[1]) < 1e-10);
    CHECK(std::fabs(s.gamma[2] - c[2] * n2(b.nu(3))) < 1e-10);
    CHECK(std::fabs(s.phi[1] - c[3] * n2(b.xi(2))) < 1e-10);
    CHECK(std::fabs(s.phi[3] - c[4] * n2(b.xi(4))) < 1e-10);
    CHECK(s.residual_norm < 1e-12);
}

TEST_CASE("off-span movement shows up as residual") {
    const FeatureBank b = build_feature_bank(1, 1, 5, {1, 1, 1}, 2);
    Vec p(5, 0.0);
    p[0] = 1.0;
    const CoeffSnapshot s = decompose(p, Vec(5, 0.0), b);
    CHECK(s.residual_norm > 0.1);
}

TEST_CASE("accumulator splits by label") {
    PsiPhiAccumulator acc(3);
    acc.accumulate(Vec{0.1, 0.2, 0.3}, Vec{0, 0, 0});
    for (double x : acc.varphi) CHECK(x == 0.0);
    acc.accumulate(Vec{0, 0, 0}, Vec{-0.1, 0.0, 0.4});
    const Vec t = acc.total();
    CHECK(t[0] == doctest::Approx(0.0));
    CHECK(t[2] == doctest::Approx(0.7));
    CHECK_THROWS_AS(acc.accumulate(Vec{1.0}, Vec{1.0}), DimensionError);
}

TEST_CASE("accumulated split matches the projection") {
    const RunConfig c = small_config();
    const Experiment ex = build_experiment(c, 7);
    const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.5, 0.05));
    for (const auto* set : {&r.traj.client_local, &r.traj.client_global})
        for (const auto& t : *set)
            for (const auto& s : t.snaps) {
                REQUIRE(s.has_acc);
                for (std::size_t l = 0; l < s.phi.size(); ++l)
                    CHECK(std::fabs(s.phi[l] - s.psi_acc[l] - s.varphi_acc[l]) < 1e-10);
            }
    for (const auto& s : r.traj.server.snaps)
        for (std::size_t l = 0; l < s.phi.size(); ++l)
            CHECK(std::fabs(s.phi[l] - s.psi_acc[l] - s.varphi_acc[l]) < 1e-10);
}

TEST_CASE("no noise keeps accumulators at zero") {
    RunConfig c = small_config();
    c.sigma_p = 0.0;
    const Experiment ex = build_experiment(c, 7);
    const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.5, 0.05));
    for (const auto& t : r.traj.client_local)
        for (const auto& s : t.snaps)
            for (std::size_t l = 0; l < s.psi_acc.size(); ++l) {
                CHECK(s.psi_acc[l] == 0.0);
                CHECK(s.varphi_acc[l] == 0.0);
            }
}

TEST_CASE("global-only run leaves local coefficients at zero") {
    const RunConfig c = small_config();
    const Experiment ex = build_experiment(c, 8);
    const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.0, 0.05));
    for (const auto& t : r.traj.client_local)
        for (const auto& s : t.snaps) {
            CHECK(std::fabs(s.beta) < 1e-12);
            for (double x : s.gamma) CHECK(std::fabs(x) < 1e-12);
            for (double x : s.phi) CHECK(std::fabs(x) < 1e-12);
        }
}

TEST_CASE("trajectory rounds must increase") {
    CoeffTrajectory t;
    CoeffSnapshot s;
    s.round = 2;
    t.append(s);
    CHECK_THROWS_AS(t.append(s), InvalidArgument);
}

TEST_CASE("diagnostics report sign structure and growth") {
    const RunConfig c = small_config();
    const Experiment ex = build_experiment(c, 9);
    const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.5, 0.05));
    const DynamicsReport d =
        dynamics_diagnostics(r.traj, ex.prob.bank, ex.prob.assignment, c.sigma_p, c.n_k, r.record.round_loss);
    CHECK(d.rounds.size() == static_cast<std::size_t>(c.R + 1));
    CHECK(d.signs_ok);
    CHECK(d.beta_bar.back() > 0.0);
    CHECK(d.gamma_bar.back() > 0.0);
}
