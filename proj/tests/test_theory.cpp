#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "promptfolio/errors.hpp"
#include "promptfolio/theory.hpp"

using namespace promptfolio;

namespace {

// Taylor series for erf, plenty for |x| < 3
double erf_series(double x) {
    double term = x, sum = x;
    for (int n = 1; n < 200; ++n) {
        term *= -x * x / n;
        sum += term / (2 * n + 1);
    }
    return 2.0 / std::sqrt(M_PI) * sum;
}

double phi_series(double x) { return 0.5 * (1.0 + erf_series(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("normal cdf against a series") {
    for (double x : {-2.5, -1.0, -0.3, 0.0, 0.7, 2.0}) CHECK(normal_cdf(x) == doctest::Approx(phi_series(x)).epsilon(1e-13));
    CHECK(normal_cdf(-1.0) == doctest::Approx(0.158655).epsilon(1e-6));
    CHECK(normal_cdf(-2.0) == doctest::Approx(0.022750).epsilon(1e-5));
}

TEST_CASE("gaussian model from a hand-made F") {
    // S = 1, L = 3; F = (1, 0, 1, 0, 0)
    const Vec F = {1.0, 0.0, 1.0, 0.0, 0.0};
    const GaussianTestModel m = gaussian_model_from_F(F, 1, 1, 1.0);
    CHECK(m.mu == doctest::Approx(1.0));
    CHECK(m.sigma == doctest::Approx(1.0));
    CHECK(analytic_error(m) == doctest::Approx(0.158655).epsilon(1e-6));

    const GaussianTestModel clean = gaussian_model_from_F(F, 1, 1, 0.0);
    CHECK(analytic_error(clean) == 0.0);
    CHECK(analytic_error({0.0, 1.0}) == 0.5);
    CHECK(analytic_error({2.0, 1.0}) == doctest::Approx(0.022750).epsilon(1e-5));
    CHECK_THROWS_AS(analytic_error({0.0, 0.0}), DegenerateError);
}

TEST_CASE("untrained prompts sit at chance") {
    const FeatureBank b = build_feature_bank(2, 20, 30, {1, 1, 1}, 5);
    const EncoderWeights enc = assemble_W(b);
    const ClassPrompts cp = make_class_prompts(ClassPromptMode::gaussian, 0.5, enc, 3);
    const auto a = assignment_from_indices({1, 2}, 2);
    const Vec p(30, 0.0);
    // zero prompts: h(0, c) = 0 for both classes, F = 0
    const GaussianTestModel m = gaussian_test_params(enc, p, p, 0.5, cp, a, 0, 1.0);
    CHECK(std::fabs(m.mu) < 1e-12);
    const McEstimate mc = mc_error(enc, p, p, 0.5, cp, a, 0, 1.0, 100000, 3);
    // a zero margin predicts +1, so exactly half the balanced labels are wrong
    CHECK(std::fabs(mc.estimate - 0.5) <= 3 * std::max(mc.stderr_, 0.5 / std::sqrt(1e5)));
}

TEST_CASE("mc agrees with the analytic error on a fixed prompt") {
    const FeatureBank b = build_feature_bank(2, 6, 12, {1, 1, 1}, 6);
    const EncoderWeights enc = assemble_W(b);
    const ClassPrompts cp = make_class_prompts(ClassPromptMode::aligned, 1.0, enc, 0);
    const auto a = assignment_from_indices({1, 2}, 2);
    std::mt19937_64 eng(2);
    std::normal_distribution<double> nd(0.0, 0.3);
    Vec pG(12), pL(12);
    for (auto& x : pG) x = nd(eng);
    for (auto& x : pL) x = nd(eng);
    const double an = analytic_error(gaussian_test_params(enc, pG, pL, 0.4, cp, a, 1, 0.6));
    const McEstimate mc = mc_error(enc, pG, pL, 0.4, cp, a, 1, 0.6, 200000, 8);
    CHECK(std::fabs(an - mc.estimate) <= 3 * std::max(mc.stderr_, std::sqrt(an * (1 - an) / 2e5)));
    CHECK_THROWS_AS(mc_error(enc, pG, pL, 0.4, cp, a, 1, 0.6, 10, 8), InvalidArgument);
}

TEST_CASE("portfolio ratio") {
    CHECK(portfolio_ratio(0.7, 1.9, 0.3, 0.0) == doctest::Approx(1.0));
    CHECK(portfolio_ratio(0.7, 1.9, 0.3, 1.0) == doctest::Approx(0.7 / 1.9));
    CHECK(portfolio_ratio(1.0, 1.0, 0.0, 0.5) == doctest::Approx(1.414214).epsilon(1e-6));
    for (double t : {0.1, 0.4, 0.8}) CHECK(portfolio_ratio(1.3, 1.3, 1.0, t) == doctest::Approx(1.0));
}

TEST_CASE("theta star closed form") {
    CHECK(theta_star(0.6, 2.0, 0.3).value == doctest::Approx(0.0).epsilon(1e-12));
    const ThetaStar s = theta_star(1.0, 1.0, 0.0);
    CHECK(s.value == doctest::Approx(0.5));
    CHECK(s.interior);
    std::mt19937_64 eng(1);
    std::uniform_real_distribution<double> ua(0.1, 4.0), ur(0.0, 1.0);
    for (int i = 0; i < 50; ++i) {
        const double a = ua(eng), b = ua(eng), rho = ur(eng);
        const ThetaStar t = theta_star(a, b, rho);
        CHECK(t.value >= 0.0);
        CHECK(t.value <= 1.0);
        // no grid point beats the returned maximiser
        for (int k = 0; k <= 100; ++k)
            CHECK(portfolio_ratio(a, b, rho, k / 100.0) <= portfolio_ratio(a, b, rho, t.value) + 1e-12);
    }
}

TEST_CASE("advantage interval by hand") {
    const AdvantageInterval ai = advantage_interval(2.0, 3.0, 0.0);
    CHECK(ai.Ca == doctest::Approx(10.0));
    CHECK(ai.Cb == doctest::Approx(52.0));
    CHECK(ai.Cc == doctest::Approx(32.0));
    CHECK(ai.upper_closed_form == doctest::Approx(1.0));
    CHECK(ai.upper == doctest::Approx(1.0));
}

TEST_CASE("equal assets make the constant term vanish") {
    const AdvantageInterval ai = advantage_interval(1.0, 1.0, 0.0);
    CHECK(ai.degenerate);
    CHECK(ai.upper == 1.0);
    for (int k = 0; k <= 100; ++k) CHECK(advantage_gap(1.0, 1.0, 0.0, k / 100.0) >= -1e-12);
    CHECK_THROWS_AS(advantage_interval(-1.0, 1.0, 0.0), InvalidArgument);
}

TEST_CASE("theta star order") {
    CHECK(theta_star_order(5, 5.0, 1.3, 0.7) == 0.0);
    CHECK(theta_star_order(2, 1.0, 1.0, 1.0) == doctest::Approx(1.0 / 9.0));
    double prev = std::numeric_limits<double>::infinity();
    for (int K = 2; K <= 10; ++K) {
        const double v = theta_star_order(K, 1.0, 0.8, 1.2);
        CHECK(v < prev);
        prev = v;
    }
    CHECK_THROWS_AS(theta_star_order(1, 1.0, 1.0, 1.0), DegenerateError);
}

TEST_CASE("identical prompts are identical assets") {
    const FeatureBank b = build_feature_bank(2, 6, 12, {1, 1, 1}, 6);
    const EncoderWeights enc = assemble_W(b);
    const ClassPrompts cp = make_class_prompts(ClassPromptMode::aligned, 1.0, enc, 0);
    const auto a = assignment_from_indices({1, 2}, 2);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> nd(0.0, 0.3);
    Vec p(12);
    for (auto& x : p) x = nd(eng);
    const AbRho r = estimate_ab_rho(enc, p, p, cp, a, 0, 0.5);
    CHECK_FALSE(r.degenerate);
    CHECK(r.a == doctest::Approx(1.0));
    CHECK(r.b == doctest::Approx(1.0));
    CHECK(r.rho == doctest::Approx(1.0));

    // a local prompt orthogonal to every noise row has no spread
    Vec pl(12, 0.0);
    axpy(0.2, b.nu(1), pl);
    const AbRho z = estimate_ab_rho(enc, p, pl, cp, a, 0, 0.5);
    CHECK(z.degenerate);
    CHECK(z.b == 0.0);
}
