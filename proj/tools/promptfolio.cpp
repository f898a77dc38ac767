// promptfolio: run, sweep, verify and theory subcommands.
// Exit codes: 0 ok, 1 verification failure, 2 config or usage error, 3 numerical divergence.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "promptfolio/errors.hpp"
#include "promptfolio/evaluation.hpp"
#include "promptfolio/io.hpp"
#include "promptfolio/theory.hpp"
#include "promptfolio/verify.hpp"

namespace fs = std::filesystem;
using namespace promptfolio;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int jobs = 1;
};

RunConfig load(const Common& c) {
    RunConfig cfg = c.config.empty() ? default_config() : load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

fs::path out_dir(const Common& c) {
    if (!c.out.empty()) return c.out;
    if (const char* env = std::getenv("PROMPTFOLIO_OUT"); env && *env) return env;
    return "promptfolio_out";
}

// Replaces non-finite numbers by "nan" and records that it happened.
std::string finish(json j) {
    const int n = sanitize_nonfinite(j);
    if (n > 0) {
        j["nan_sentinels"] = n;
        j["warnings"].push_back("non-finite values serialised as \"nan\"");
    }
    return j.dump(2) + "\n";
}

std::string mode_name(double theta) {
    if (theta == 0.0) return "PromptFL-equivalent";
    if (theta == 1.0) return "CoOp-equivalent";
    return "PromptFolio";
}

int cmd_run(const Common& common) {
    const RunConfig cfg = load(common);
    const std::string hash = config_hash(cfg);
    const fs::path dir = out_dir(common) / ("run_" + hash);

    const std::uint64_t seed = replicate_seed(cfg, 0);
    const Experiment ex = build_experiment(cfg, seed);
    const double eta = resolve_eta(cfg, ex.prob, cfg.theta);
    const RunResult run = run_promptfolio(ex.prob, train_config(cfg, cfg.theta, eta, common.jobs));
    const PointResult pt = run_point(cfg, cfg.theta, 0, common.jobs);
    const DynamicsReport dyn = dynamics_diagnostics(run.traj, ex.prob.bank, ex.prob.assignment, cfg.sigma_p, cfg.n_k,
                                                    run.record.round_loss);

    json report;
    report["config"] = to_json(cfg);
    report["config_hash"] = hash;
    report["mode"] = mode_name(cfg.theta);
    report["theta"] = cfg.theta;
    report["eta"] = eta;
    report["eta_auto"] = !cfg.eta.has_value();
    report["result"] = pt.to_json();
    report["round_loss"] = run.record.round_loss;
    report["dynamics"] = dyn.to_json();
    report["final"] = {{"server_global", run.state.server_global}, {"client_local", run.state.client_local}};
    report["warnings"] = json::array();

    std::ostringstream traj;
    write_csv(traj, run.traj);
    std::ostringstream loss;
    loss << "round,pooled_loss\n";
    loss.precision(17);
    for (std::size_t r = 0; r < run.record.round_loss.size(); ++r) loss << r << ',' << run.record.round_loss[r] << '\n';

    atomic_write(dir / "trajectory.csv", traj.str());
    atomic_write(dir / "loss.csv", loss.str());
    atomic_write(dir / "report.json", finish(report));
    std::printf("%s  theta=%g  error=%.4f +- %.4f  analytic=%.4f  -> %s\n", mode_name(cfg.theta).c_str(), cfg.theta,
                pt.emp_error, pt.emp_stderr, pt.analytic_error, dir.c_str());
    return 0;
}

int cmd_sweep(const Common& common, const std::string& axis) {
    const RunConfig cfg = load(common);
    const fs::path root = out_dir(common);
    const fs::path points = root / "points";

    PointStore store{[&](const std::string& key) -> std::optional<PointResult> {
                         const auto j = read_json_if_exists(points / (key + ".json"));
                         if (!j) return std::nullopt;
                         try {
                             return PointResult::from_json(*j);
                         } catch (const std::exception&) {
                             return std::nullopt;
                         }
                     },
                     [&](const PointResult& p) { atomic_write(points / (p.key + ".json"), finish(p.to_json())); }};

    SweepResult s;
    if (axis == "theta")
        s = sweep_theta(cfg, cfg.theta_grid, common.jobs, &store);
    else if (axis == "heterogeneity")
        s = sweep_heterogeneity(cfg, cfg.alpha_grid, common.jobs, &store);
    else
        s = sweep_clients(cfg, cfg.K_grid, common.jobs, &store);

    const std::string stem = "sweep_" + axis + "_" + s.config_hash;
    std::ostringstream csv;
    s.write_csv(csv);
    json j = s.to_json();
    j["config"] = to_json(cfg);
    j["warnings"] = json::array();
    atomic_write(root / (stem + ".csv"), csv.str());
    atomic_write(root / (stem + ".json"), finish(j));

    for (std::size_t i = 0; i < s.grid.size(); ++i)
        std::printf("%s=%g  optimal theta %.2f  (theory order %.3f)\n", axis.c_str(), s.grid[i], s.theta_opt[i],
                    s.order_prediction[i]);
    std::printf("-> %s\n", (root / (stem + ".csv")).c_str());
    return 0;
}

int cmd_verify(const Common& common, const std::string& suite) {
    const RunConfig cfg = load(common);
    const auto results = run_suite(suite, cfg);
    json verdict;
    verdict["suite"] = suite;
    verdict["config_hash"] = config_hash(cfg);
    verdict["results"] = json::array();
    bool all = true;
    std::string first_fail;
    for (const auto& r : results) {
        std::printf("[%s] %-14s %6.1fs  %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.seconds, r.message.c_str());
        verdict["results"].push_back(
            {{"name", r.name}, {"pass", r.pass}, {"message", r.message}, {"seconds", r.seconds}, {"details", r.details}});
        if (!r.pass && all) first_fail = r.name + ": " + r.message;
        all = all && r.pass;
    }
    verdict["pass"] = all;
    verdict["warnings"] = json::array();
    if (!all) verdict["first_failure"] = first_fail;
    atomic_write(out_dir(common) / ("verify_" + suite + ".json"), finish(verdict));
    if (!all) std::fprintf(stderr, "verification failed: %s\n", first_fail.c_str());
    return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PromptFolio federated prompt-learning simulator and theory checks"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config, "JSON run config (defaults are used when absent)");
    app.add_option("--out", common.out, "output directory (default: $PROMPTFOLIO_OUT, else ./promptfolio_out)");
    app.add_option("--seed", common.seed, "master seed, overrides the config");
    app.add_option("--jobs", common.jobs, "worker threads for sweeps and client updates")->check(CLI::PositiveNumber);

    auto* run = app.add_subcommand("run", "train once at the config's theta and write report.json plus CSVs");

    std::string axis = "theta";
    auto* sweep = app.add_subcommand("sweep", "theta curves along one axis; finished points are reused");
    sweep->add_option("--axis", axis, "theta | heterogeneity | clients")
        ->check(CLI::IsMember({"theta", "heterogeneity", "clients"}));

    std::string suite = "all";
    auto* verify = app.add_subcommand("verify", "property suites; exit 1 names the first failure");
    verify->add_option("suite", suite, "gradients | decomposition | gaussian | portfolio | dynamics | degeneration | all")
        ->check(CLI::IsMember(suite_names()));

    auto* theory = app.add_subcommand("theory", "closed forms, printed as JSON");
    theory->require_subcommand(1);
    double a = 1.0, b = 1.0, rho = 0.0, theta = 0.5, chi_k = 1.0, snr_g = 1.0, snr_k = 1.0, mu = 0.0, sigma = 1.0;
    int K = 2;
    auto abr = [&](CLI::App* s) {
        s->add_option("--a", a, "local/global mean ratio")->required();
        s->add_option("--b", b, "local/global std ratio")->required();
        s->add_option("--rho", rho, "correlation")->required();
    };
    auto* t_ratio = theory->add_subcommand("ratio", "mixed mean-to-std ratio at theta");
    abr(t_ratio);
    t_ratio->add_option("--theta", theta)->required();
    auto* t_star = theory->add_subcommand("theta-star", "ratio-maximising theta");
    abr(t_star);
    auto* t_adv = theory->add_subcommand("advantage", "advantage interval constants and upper end");
    abr(t_adv);
    auto* t_order = theory->add_subcommand("order", "order-level theta prediction from K, chi and SNRs");
    t_order->add_option("--K", K)->required();
    t_order->add_option("--chi", chi_k)->required();
    t_order->add_option("--snr-g", snr_g)->required();
    t_order->add_option("--snr-k", snr_k)->required();
    auto* t_err = theory->add_subcommand("error", "Phi(-mu/sigma)");
    t_err->add_option("--mu", mu)->required();
    t_err->add_option("--sigma", sigma)->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (run->parsed()) return cmd_run(common);
        if (sweep->parsed()) return cmd_sweep(common, axis);
        if (verify->parsed()) return cmd_verify(common, suite);
        json j;
        if (t_ratio->parsed()) j = {{"ratio", portfolio_ratio(a, b, rho, theta)}};
        if (t_star->parsed()) {
            const ThetaStar s = theta_star(a, b, rho);
            j = {{"theta_star", s.value}, {"raw", s.raw}, {"denominator", s.denominator}, {"interior", s.interior}};
        }
        if (t_adv->parsed()) j = advantage_interval(a, b, rho).to_json();
        if (t_order->parsed()) j = {{"theta_star_order", theta_star_order(K, chi_k, snr_g, snr_k)}};
        if (t_err->parsed()) j = {{"error", analytic_error({mu, sigma, "cli"})}};
        sanitize_nonfinite(j);
        std::cout << j.dump(2) << '\n';
        return 0;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DivergenceError& e) {
        std::fprintf(stderr, "divergence: %s\n", e.what());
        return 3;
    } catch (const InvalidArgument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return 2;
    } catch (const DegenerateError& e) {
        std::fprintf(stderr, "degenerate: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
