#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "promptfolio/errors.hpp"
#include "promptfolio/evaluation.hpp"

using namespace promptfolio;

namespace {

RunConfig quick() {
    RunConfig c = default_config();
    c.replicates = 2;
    c.n_test = 1024;
    return c;
}

double spread(const ThetaCurve& c) {
    return *std::max_element(c.error.begin(), c.error.end()) - *std::min_element(c.error.begin(), c.error.end());
}

}  // namespace

TEST_CASE("empirical error rejects empty test sets") {
    RunConfig c = quick();
    c.n_test = 0;
    const Experiment ex = build_experiment(c, 1);
    const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.5, 4e-4));
    CHECK_THROWS_AS(empirical_error(r.state, 0.5, ex.test, ex.prob.cp, ex.prob.enc), InvalidArgument);
    CHECK_THROWS_AS(empirical_error(r.state, 0.5, {}, ex.prob.cp, ex.prob.enc), InvalidArgument);
}

TEST_CASE("random prompts sit at chance on average") {
    // a single random prompt has a random margin ratio; over many draws the error centres on 0.5
    RunConfig c = quick();
    c.R = 0;
    c.n_test = 2048;
    c.sigma_0 = 0.5;
    const int draws = 40;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < draws; ++i) {
        const Experiment ex = build_experiment(c, static_cast<std::uint64_t>(100 + i));
        const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.5, 4e-4));
        const double e = empirical_error(r.state, 0.5, ex.test, ex.prob.cp, ex.prob.enc).pooled;
        s += e;
        s2 += e * e;
    }
    const double mean = s / draws;
    const double sd = std::sqrt((s2 - draws * mean * mean) / (draws - 1));
    MESSAGE("mean " << mean << ", sd " << sd);
    CHECK(std::fabs(mean - 0.5) < 3 * sd / std::sqrt(double(draws)));
}

TEST_CASE("noiseless data is learned perfectly") {
    RunConfig c = quick();
    c.sigma_p = 0.0;
    c.eta = 0.05;
    c.R = 10;
    const Experiment ex = build_experiment(c, 3);
    const RunResult r = run_promptfolio(ex.prob, train_config(c, 0.5, 0.05));
    const ErrorReport e = empirical_error(r.state, 0.5, ex.test, ex.prob.cp, ex.prob.enc);
    CHECK(e.pooled == 0.0);
}

TEST_CASE("analytic error tracks the test error after training") {
    RunConfig c = quick();
    c.n_test = 100000;
    const PointResult p = run_point(c, 0.4, 0);
    MESSAGE("empirical " << p.emp_error << " +- " << p.emp_stderr << ", analytic " << p.analytic_error);
    CHECK(std::fabs(p.emp_error - p.analytic_error) <= 3 * p.emp_stderr);
}

TEST_CASE("homogeneous clients prefer the global prompt") {
    RunConfig c = quick();
    c.S = 1;
    const ThetaCurve curve = theta_curve(c, c.theta_grid);
    MESSAGE("theta_opt " << curve.theta_opt);
    CHECK(curve.theta_opt <= 0.1 + 1e-12);
}

TEST_CASE("a single client gains nothing from mixing") {
    // both prompts see the same data, so the curve is symmetric in theta <-> 1 - theta.
    // It is not flat: the mixed feature moves with step (1-theta)^2 + theta^2, so the middle trains slowest.
    RunConfig c = quick();
    c.K = 1;
    c.n_test = 4096;
    const ThetaCurve curve = theta_curve(c, c.theta_grid);
    const std::size_t n = curve.error.size();
    for (std::size_t i = 0; i < n; ++i) CHECK(curve.error[i] == curve.error[n - 1 - i]);
    for (std::size_t i = 1; i + 1 < n; ++i) CHECK(curve.error[i] >= curve.error[0] - curve.stderr_[0]);
    MESSAGE("spread " << spread(curve) << ", stderr " << curve.stderr_[0]);
}

TEST_CASE("point store skips finished points") {
    RunConfig c = quick();
    c.replicates = 1;
    std::map<std::string, PointResult> saved;
    int computed = 0;
    PointStore store{[&](const std::string& k) -> std::optional<PointResult> {
                         auto it = saved.find(k);
                         if (it == saved.end()) return std::nullopt;
                         return it->second;
                     },
                     [&](const PointResult& p) {
                         saved[p.key] = p;
                         ++computed;
                     }};
    const Vec grid = {0.0, 0.5, 1.0};
    const SweepResult first = sweep_theta(c, grid, 1, &store);
    CHECK(computed == 3);
    const SweepResult second = sweep_theta(c, grid, 1, &store);
    CHECK(computed == 3);
    CHECK(first.curves[0].error == second.curves[0].error);

    std::ostringstream a, b;
    first.write_csv(a);
    second.write_csv(b);
    CHECK(a.str() == b.str());
    CHECK(a.str().find("theta_star") != std::string::npos);
    CHECK(a.str().find("advantage_upper") != std::string::npos);
}

TEST_CASE("point results survive json") {
    const PointResult p = run_point(quick(), 0.3, 1);
    const PointResult q = PointResult::from_json(p.to_json());
    CHECK(q.key == p.key);
    CHECK(q.emp_error == p.emp_error);
    CHECK(q.theta_star == p.theta_star);
}

TEST_CASE("trend check tolerates adjacent ties only") {
    auto curve = [](Vec err, double se) {
        ThetaCurve c;
        c.theta = {0.0, 0.5, 1.0};
        c.error = err;
        c.stderr_ = Vec(3, se);
        c.argmin = static_cast<int>(std::min_element(err.begin(), err.end()) - err.begin());
        c.theta_opt = c.theta[static_cast<std::size_t>(c.argmin)];
        return c;
    };
    SweepResult s;
    s.curves = {curve({0.3, 0.2, 0.4}, 0.01), curve({0.3, 0.25, 0.1}, 0.01)};
    CHECK_FALSE(check_non_increasing(s).ok);
    s.curves = {curve({0.3, 0.2, 0.4}, 0.01), curve({0.3, 0.2, 0.195}, 0.01)};
    CHECK(check_non_increasing(s).ok);
    s.curves = {curve({0.1, 0.2, 0.4}, 0.01), curve({0.3, 0.2, 0.1}, 0.2)};
    CHECK_FALSE(check_non_increasing(s).ok);
}

TEST_CASE("valley check needs both endpoints beaten") {
    ThetaCurve c;
    c.theta = {0.0, 0.5, 1.0};
    c.stderr_ = {0.01, 0.01, 0.01};
    c.error = {0.3, 0.2, 0.25};
    CHECK(check_interior_valley(c).ok);
    c.error = {0.3, 0.2, 0.21};
    CHECK_FALSE(check_interior_valley(c).ok);
}
