#include "promptfolio/verify.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "promptfolio/errors.hpp"
#include "promptfolio/evaluation.hpp"
#include "promptfolio/rng.hpp"
#include "promptfolio/theory.hpp"

namespace promptfolio {

using nlohmann::json;

namespace {

class Timer {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

bool bitwise_equal(const Vec& a, const Vec& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Vec random_vec(std::size_t n, double sd, Engine& eng) {
    std::normal_distribution<double> nd(0.0, sd);
    Vec v(n);
    for (double& x : v) x = nd(eng);
    return v;
}

Problem problem_with_assignment(const RunConfig& cfg, std::uint64_t seed, const ClientAssignment& a) {
    Problem p = build_experiment(cfg, seed).prob;
    p.assignment = a;
    p.train = gen_train_data(std::vector<int>(static_cast<std::size_t>(a.K), cfg.n_k), a, cfg.L, cfg.sigma_p, seed,
                             cfg.labels);
    return p;
}

}  // namespace

SuiteResult verify_gradients(int n_configs, std::uint64_t seed, double tol) {
    Timer timer;
    SuiteResult res{"gradients", true, "", json::object(), 0.0};
    Engine eng = make_engine(seed, "verify_gradients");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double h = 1e-6;
    // central differences carry ~1e-10 of round-off at this step, so tiny coordinates are compared absolutely
    const double rel_floor = 1e-4;
    double worst = 0.0, worst_abs = 0.0;
    int worst_cfg = -1;
    for (int c = 0; c < n_configs; ++c) {
        const int S = 1 + c % 3;
        const int L = 1 + (c / 3) % 4;
        const int m_p = 1 + S + L + static_cast<int>(unif(eng) * 4);
        const NormSpec norms{0.5 + 1.5 * unif(eng), 0.5 + 1.5 * unif(eng), 0.5 + 1.5 * unif(eng)};
        const FeatureBank bank = build_feature_bank(S, L, m_p, norms, derive_seed(seed, "bank", c));
        const EncoderWeights enc = assemble_W(bank);
        const auto mode = static_cast<ClassPromptMode>((c / 2) % 3);
        const double scale = mode == ClassPromptMode::aligned ? 0.5 : 0.3;
        const ClassPrompts cp = make_class_prompts(mode, scale, enc, derive_seed(seed, "class", c));
        const LabelScheme labels = c % 4 < 2 ? LabelScheme::balanced : LabelScheme::random;
        const ClientDataset data =
            gen_client_data(4 + c % 5, 1 + c % S, S, L, 0.8, derive_seed(seed, "data", c), labels);
        const double theta = c % 5 == 0 ? 0.0 : c % 5 == 1 ? 1.0 : unif(eng);
        const LossMode lm = c % 2 == 0 ? LossMode::margin : LossMode::paper_similarity;
        Vec pG = random_vec(static_cast<std::size_t>(m_p), 0.7, eng);
        Vec pL = random_vec(static_cast<std::size_t>(m_p), 0.7, eng);

        const PromptGrads g = grad_prompts(data, enc, pG, pL, theta, cp, lm);
        auto check = [&](Vec& p, const Vec& analytic, const char* which) {
            for (std::size_t j = 0; j < p.size(); ++j) {
                const double keep = p[j];
                p[j] = keep + h;
                const double up = batch_loss(data, enc, pG, pL, theta, cp, lm);
                p[j] = keep - h;
                const double dn = batch_loss(data, enc, pG, pL, theta, cp, lm);
                p[j] = keep;
                const double fd = (up - dn) / (2.0 * h);
                const double rel = std::fabs(analytic[j] - fd) / std::max({std::fabs(analytic[j]), std::fabs(fd), rel_floor});
                worst_abs = std::max(worst_abs, std::fabs(analytic[j] - fd));
                if (rel > worst) {
                    worst = rel;
                    worst_cfg = c;
                }
                if (rel >= tol && res.pass) {
                    res.pass = false;
                    res.message = "config " + std::to_string(c) + " " + which + "[" + std::to_string(j) +
                                  "]: relative error " + fmt("%.3e", rel);
                }
            }
        };
        check(pG, g.g_G, "grad_G");
        check(pL, g.g_L, "grad_L");
    }
    res.details = {{"configs", n_configs}, {"worst_relative_error", worst}, {"worst_config", worst_cfg},
                   {"tolerance", tol}, {"fd_step", h},
                   {"worst_abs_error", worst_abs}, {"relative_floor", rel_floor}};
    if (res.pass) res.message = fmt("%.0f configs, worst relative error %.2e", n_configs, worst);
    res.seconds = timer.seconds();
    return res;
}

SuiteResult verify_decomposition(const RunConfig& cfg, double theta) {
    Timer timer;
    SuiteResult res{"decomposition", true, "", json::object(), 0.0};
    const Experiment ex = build_experiment(cfg, replicate_seed(cfg, 0));
    const double eta = resolve_eta(cfg, ex.prob, theta);
    const RunResult run = run_promptfolio(ex.prob, train_config(cfg, theta, eta));
    double worst_resid = 0.0, worst_split = 0.0;
    long long snaps = 0;
    auto visit = [&](const CoeffTrajectory& t) {
        for (const auto& s : t.snaps) {
            ++snaps;
            const double r = s.residual_norm / (1.0 + s.delta_norm);
            worst_resid = std::max(worst_resid, r);
            if (r >= 1e-8 && res.pass) {
                res.pass = false;
                res.message = t.id + " round " + std::to_string(s.round) + ": residual " + fmt("%.3e", r);
            }
            for (std::size_t l = 0; l < s.phi.size(); ++l) {
                const double d = std::fabs(s.phi[l] - (s.psi_acc[l] + s.varphi_acc[l]));
                worst_split = std::max(worst_split, d);
                if (d >= 1e-8 && res.pass) {
                    res.pass = false;
                    res.message = t.id + " round " + std::to_string(s.round) + ": psi+varphi != phi by " +
                                  fmt("%.3e", d);
                }
            }
        }
    };
    visit(run.traj.server);
    for (const auto& t : run.traj.client_global) visit(t);
    for (const auto& t : run.traj.client_local) visit(t);

    // beta of the aggregate is the weighted mean of the clients' beta
    double worst_lin = 0.0;
    const auto w = ex.prob.weights();
    double wsum = 0.0;
    for (double x : w) wsum += x;
    for (std::size_t i = 1; i < run.traj.server.snaps.size(); ++i) {
        double avg = 0.0;
        for (std::size_t k = 0; k < w.size(); ++k) avg += w[k] / wsum * run.traj.client_global[k].snaps[i].beta;
        worst_lin = std::max(worst_lin, std::fabs(avg - run.traj.server.snaps[i].beta));
    }
    if (worst_lin >= 1e-10 && res.pass) {
        res.pass = false;
        res.message = "aggregated beta differs from the weighted client mean by " + fmt("%.3e", worst_lin);
    }
    res.details = {{"snapshots", snaps},
                   {"worst_relative_residual", worst_resid},
                   {"worst_psi_phi_gap", worst_split},
                   {"worst_beta_linearity_gap", worst_lin},
                   {"eta", eta}};
    if (res.pass) res.message = fmt("%.0f snapshots, worst residual %.2e", double(snaps), worst_resid);
    res.seconds = timer.seconds();
    return res;
}

SuiteResult verify_gaussian(int n_configs, long long N, std::uint64_t seed) {
    Timer timer;
    SuiteResult res{"gaussian", true, "", json::array(), 0.0};
    Engine eng = make_engine(seed, "verify_gaussian");
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    int failures = 0;
    for (int c = 0; c < n_configs; ++c) {
        const int S = 2, L = 8 + 4 * (c % 3), m_p = 1 + S + L + 3;
        const double sigma_p = 0.3 + 0.9 * unif(eng);
        const FeatureBank bank = build_feature_bank(S, L, m_p, {1.0, 1.0, 1.0}, derive_seed(seed, "bank", c));
        Problem prob;
        prob.bank = bank;
        prob.enc = assemble_W(bank);
        prob.cp = make_class_prompts(c % 4 == 3 ? ClassPromptMode::gaussian : ClassPromptMode::aligned,
                                     c % 4 == 3 ? 0.3 : 1.0, prob.enc, derive_seed(seed, "class", c));
        prob.assignment = assign_clients(2, S, {PolicyKind::round_robin, 1.0}, 0);
        const double theta = unif(eng);
        Vec pG, pL;
        const bool trained = c % 2 == 1;
        if (trained) {
            prob.train = gen_train_data({32, 32}, prob.assignment, L, sigma_p, derive_seed(seed, "train", c));
            prob.p0 = random_vec(static_cast<std::size_t>(m_p), 0.01, eng);
            TrainConfig tc;
            tc.eta = 0.05;
            tc.E = 5;
            tc.R = 10;
            tc.theta = theta;
            tc.track = false;
            const RunResult run = run_promptfolio(prob, tc);
            pG = run.state.server_global;
            pL = run.state.client_local[0];
        } else {
            pG = random_vec(static_cast<std::size_t>(m_p), 0.3, eng);
            pL = random_vec(static_cast<std::size_t>(m_p), 0.3, eng);
        }
        const GaussianTestModel gm =
            gaussian_test_params(prob.enc, pG, pL, theta, prob.cp, prob.assignment, 0, sigma_p);
        const double an = analytic_error(gm);
        const McEstimate mc =
            mc_error(prob.enc, pG, pL, theta, prob.cp, prob.assignment, 0, sigma_p, N, derive_seed(seed, "mc", c));
        const double se = std::max(mc.stderr_, std::sqrt(an * (1.0 - an) / double(N)));
        const bool ok = std::fabs(an - mc.estimate) <= 3.0 * se;
        if (!ok) {
            ++failures;
            if (res.pass)
                res.message = "config " + std::to_string(c) + ": analytic " + fmt("%.6f", an) + " vs MC " +
                              fmt("%.6f", mc.estimate) + " (" + fmt("%.2f", std::fabs(an - mc.estimate) / se) +
                              " stderr)";
            res.pass = false;
        }
        res.details.push_back({{"config", c},
                               {"trained", trained},
                               {"theta", theta},
                               {"mu", gm.mu},
                               {"sigma", gm.sigma},
                               {"analytic", an},
                               {"mc", mc.estimate},
                               {"stderr", se},
                               {"z", se > 0 ? (an - mc.estimate) / se : 0.0}});
    }
    if (res.pass) res.message = fmt("%.0f configs within 3 stderr at N=%.0f", n_configs, double(N));
    res.seconds = timer.seconds();
    return res;
}

SuiteResult verify_theta_star(int n_interior, std::uint64_t seed) {
    Timer timer;
    SuiteResult res{"theta_star", true, "", json::object(), 0.0};
    Engine eng = make_engine(seed, "verify_theta_star");
    std::uniform_real_distribution<double> ua(0.05, 5.0), ub(0.1, 5.0), ur(0.0, 1.0);
    int interior = 0, boundary = 0, attempts = 0;
    double worst = 0.0;
    while ((interior < n_interior || boundary < n_interior) && attempts < 100 * n_interior) {
        ++attempts;
        const double a = ua(eng), b = ub(eng), rho = ur(eng);
        ThetaStar ts;
        try {
            ts = theta_star(a, b, rho);
        } catch (const DegenerateError&) {
            continue;
        }
        if (ts.interior ? interior >= n_interior : boundary >= n_interior) continue;
        (ts.interior ? interior : boundary)++;
        int best = 0;
        double best_r = -1e300;
        for (int i = 0; i <= 10000; ++i) {
            const double r = portfolio_ratio(a, b, rho, i * 1e-4);
            if (r > best_r) {
                best_r = r;
                best = i;
            }
        }
        const double diff = std::fabs(ts.value - best * 1e-4);
        worst = std::max(worst, diff);
        if (diff > 1e-3 && res.pass) {
            res.pass = false;
            std::ostringstream os;
            os << (ts.interior ? "interior" : "projected") << " draw a=" << a << " b=" << b << " rho=" << rho
               << ": theta*=" << ts.value << " grid argmax=" << best * 1e-4;
            res.message = os.str();
        }
    }
    res.details = {{"interior", interior}, {"projected", boundary}, {"worst_abs_diff", worst}};
    if (res.pass) res.message = fmt("%.0f interior + %.0f projected draws, worst |diff| %.1e", interior, boundary, worst);
    res.seconds = timer.seconds();
    return res;
}

SuiteResult verify_advantage(int n_draws, std::uint64_t seed) {
    Timer timer;
    SuiteResult res{"advantage", true, "", json::object(), 0.0};
    const AdvantageInterval spot = advantage_interval(2.0, 3.0, 0.0);
    const bool spot_ok = std::fabs(spot.Ca - 10.0) < 1e-12 && std::fabs(spot.Cb - 52.0) < 1e-12 &&
                         std::fabs(spot.Cc - 32.0) < 1e-12 && spot.upper_closed_form == 1.0 && spot.upper == 1.0;
    if (!spot_ok) {
        res.pass = false;
        res.message = "spot check a=2, b=3, rho=0 did not give upper = 1.0";
    }
    Engine eng = make_engine(seed, "verify_advantage");
    std::uniform_real_distribution<double> ua(0.05, 5.0), ub(1.01, 5.0), ur(0.0, 1.0);
    const double bases[] = {0.3, 1.0, 2.5};
    double worst = -1e300, mean_upper = 0.0;
    int checked = 0;
    for (int d = 0; d < n_draws; ++d) {
        const double a = ua(eng), b = ub(eng), rho = ur(eng);
        const AdvantageInterval ai = advantage_interval(a, b, rho);
        mean_upper += ai.upper / n_draws;
        std::vector<double> grid;
        for (int i = 0; i * 1e-3 <= ai.upper; ++i) grid.push_back(i * 1e-3);
        grid.push_back(ai.upper);
        for (double t : grid) {
            const double mix = portfolio_ratio(a, b, rho, t);
            for (double base : bases) {
                const double lhs = normal_cdf(-base * mix);
                const double rhs = (1.0 - t) * normal_cdf(-base) + t * normal_cdf(-base * a / b);
                ++checked;
                worst = std::max(worst, lhs - rhs);
                if (lhs > rhs + 1e-12 && res.pass) {
                    res.pass = false;
                    std::ostringstream os;
                    os << "a=" << a << " b=" << b << " rho=" << rho << " theta=" << t << ": mixed error " << lhs
                       << " > linear mix " << rhs;
                    res.message = os.str();
                }
            }
        }
    }
    res.details = {{"draws", n_draws},     {"points_checked", checked},  {"worst_excess", worst},
                   {"mean_upper", mean_upper}, {"spot_check", spot.to_json()}};
    if (res.pass)
        res.message = fmt("%.0f draws, %.0f grid checks, spot upper=%.1f", n_draws, checked, spot.upper);
    res.seconds = timer.seconds();
    return res;
}

SuiteResult verify_degeneration(const RunConfig& cfg) {
    Timer timer;
    SuiteResult res{"degeneration", true, "", json::object(), 0.0};
    const Experiment ex = build_experiment(cfg, replicate_seed(cfg, 0));
    const double eta = resolve_eta(cfg, ex.prob, 0.0);
    TrainConfig tc = train_config(cfg, 0.0, eta);
    tc.snapshot_every = 1;
    tc.track = false;

    const RunResult r0 = run_promptfolio(ex.prob, tc);
    const auto ref0 = run_fedavg_single(ex.prob, tc);
    bool ok0 = ref0.size() == r0.record.snapshots.size();
    for (std::size_t t = 0; ok0 && t < ref0.size(); ++t)
        ok0 = bitwise_equal(ref0[t], r0.record.snapshots[t].server_global);

    tc.theta = 1.0;
    const RunResult r1 = run_promptfolio(ex.prob, tc);
    const auto ref1 = run_isolated(ex.prob, tc);
    bool ok1 = true;
    for (std::size_t k = 0; ok1 && k < ref1.size(); ++k) {
        ok1 = ref1[k].size() == r1.record.snapshots.size();
        for (std::size_t t = 0; ok1 && t < ref1[k].size(); ++t)
            ok1 = bitwise_equal(ref1[k][t], r1.record.snapshots[t].client_local[k]);
    }
    res.pass = ok0 && ok1;
    res.details = {{"theta0_matches_fedavg", ok0}, {"theta1_matches_isolated", ok1}, {"rounds", cfg.R}, {"eta", eta}};
    res.message = res.pass ? "theta=0 and theta=1 trajectories bitwise equal to the references"
                           : (!ok0 ? "theta=0 server trajectory differs from single-prompt FedAvg"
                                   : "theta=1 local trajectories differ from isolated training");
    res.seconds = timer.seconds();
    return res;
}

SuiteResult verify_dynamics(const RunConfig& cfg) {
    Timer timer;
    SuiteResult res{"dynamics", true, "", json::object(), 0.0};
    if (cfg.S < cfg.K) {
        res.pass = false;
        res.message = "dynamics check needs S >= K for a fully heterogeneous assignment";
        return res;
    }
    const std::uint64_t seed = replicate_seed(cfg, 0);
    std::vector<int> distinct, shared(static_cast<std::size_t>(cfg.K), 1);
    for (int k = 0; k < cfg.K; ++k) distinct.push_back(k % cfg.S + 1);
    const ClientAssignment a_dis = assignment_from_indices(distinct, cfg.S);
    const ClientAssignment a_sh = assignment_from_indices(shared, cfg.S);

    const Problem base = problem_with_assignment(cfg, seed, a_dis);
    RunConfig cfg2 = cfg;
    cfg2.norm_global *= 2.0;
    const Problem doubled = problem_with_assignment(cfg2, seed, a_dis);
    const Problem iid = problem_with_assignment(cfg, seed, a_sh);

    const double eta = search_eta(base, train_config(cfg, cfg.theta, cfg.eta_start), cfg.eta_start);
    TrainConfig tc = train_config(cfg, cfg.theta, eta);
    tc.snapshot_every = 1;
    const RunResult rA = run_promptfolio(base, tc);
    const RunResult rB = run_promptfolio(doubled, tc);
    const RunResult rD = run_promptfolio(iid, tc);

    const DynamicsReport dA = dynamics_diagnostics(rA.traj, base.bank, a_dis, cfg.sigma_p, cfg.n_k, rA.record.round_loss);
    const DynamicsReport dB =
        dynamics_diagnostics(rB.traj, doubled.bank, a_dis, cfg.sigma_p, cfg.n_k, rB.record.round_loss);
    const DynamicsReport dD = dynamics_diagnostics(rD.traj, iid.bank, a_sh, cfg.sigma_p, cfg.n_k, rD.record.round_loss);

    const double beta_ratio = dB.beta_bar.at(1) / dA.beta_bar.at(1);
    const double gamma_ratio = dD.gamma_bar.at(1) / dA.gamma_bar.at(1);
    const bool beta_ok = beta_ratio >= 2.7 && beta_ratio <= 6.0;
    const bool gamma_ok = gamma_ratio >= cfg.K / 2.0 && gamma_ratio <= 2.0 * cfg.K;

    const std::size_t i5 = std::min<std::size_t>(5, dA.phi_bar_norm.size() - 1);
    double phi_max = 0.0;
    for (std::size_t i = i5; i < dA.phi_bar_norm.size(); ++i) phi_max = std::max(phi_max, dA.phi_bar_norm[i]);
    const double phi_growth = phi_max / dA.phi_bar_norm[i5];
    const bool phi_ok = phi_growth <= 3.0;
    const bool signs_ok = dA.signs_ok && dB.signs_ok && dD.signs_ok;

    Vec gamma_ratio_rounds;
    for (std::size_t i = 1; i < std::min<std::size_t>(dA.gamma_bar.size(), 11); ++i)
        gamma_ratio_rounds.push_back(dD.gamma_bar[i] / dA.gamma_bar[i]);

    res.pass = beta_ok && gamma_ok && phi_ok && signs_ok;
    res.details = {{"eta", eta},
                   {"beta_ratio_round1", beta_ratio},
                   {"gamma_ratio_round1", gamma_ratio},
                   {"gamma_ratio_rounds_1_10", gamma_ratio_rounds},
                   {"phi_bar_growth_after_round5", phi_growth},
                   {"phi_bar_norm", dA.phi_bar_norm},
                   {"signs_ok", signs_ok},
                   {"loss_threshold_round", dA.loss_threshold_round},
                   {"final_loss", rA.record.round_loss.back()}};
    res.message = fmt("beta ratio %.2f (2.7..6), gamma ratio %.2f (K/2..2K), ", beta_ratio, gamma_ratio) +
                  fmt("phi growth %.2f (<=3)", phi_growth) + (signs_ok ? "" : ", sign check failed");
    res.seconds = timer.seconds();
    return res;
}

std::vector<std::string> suite_names() {
    return {"gradients", "decomposition", "gaussian", "portfolio", "dynamics", "degeneration", "all"};
}

std::vector<SuiteResult> run_suite(const std::string& name, const RunConfig& cfg) {
    std::vector<SuiteResult> out;
    const bool all = name == "all";
    bool known = all;
    if (all || name == "gradients") {
        known = true;
        out.push_back(verify_gradients());
    }
    if (all || name == "decomposition") {
        known = true;
        out.push_back(verify_decomposition(cfg));
    }
    if (all || name == "gaussian") {
        known = true;
        out.push_back(verify_gaussian());
    }
    if (all || name == "portfolio") {
        known = true;
        out.push_back(verify_theta_star());
        out.push_back(verify_advantage());
    }
    if (all || name == "dynamics") {
        known = true;
        out.push_back(verify_dynamics(cfg));
    }
    if (all || name == "degeneration") {
        known = true;
        out.push_back(verify_degeneration(cfg));
    }
    if (!known) throw InvalidArgument("unknown verify suite '" + name + "'");
    return out;
}

}  // namespace promptfolio
