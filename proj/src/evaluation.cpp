#include "promptfolio/evaluation.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "promptfolio/errors.hpp"
#include "promptfolio/rng.hpp"
#include "promptfolio/theory.hpp"

namespace promptfolio {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

json num(double x) { return std::isfinite(x) ? json(x) : json("nan"); }
double unnum(const json& j) { return j.is_number() ? j.get<double>() : kNaN; }

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

Experiment build_experiment(const RunConfig& cfg, std::uint64_t seed) {
    validate(cfg);
    Experiment ex;
    Problem& p = ex.prob;
    p.bank = build_feature_bank(cfg.S, cfg.L, cfg.m_p, {cfg.norm_global, cfg.norm_local, cfg.norm_noise}, seed);
    p.enc = assemble_W(p.bank);
    p.cp = make_class_prompts(cfg.class_mode, cfg.class_scale, p.enc, seed);
    p.assignment = assign_clients(cfg.K, cfg.S, cfg.policy, seed);
    p.train = gen_train_data(std::vector<int>(static_cast<std::size_t>(cfg.K), cfg.n_k), p.assignment, cfg.L,
                             cfg.sigma_p, seed, cfg.labels);
    Engine eng = make_engine(seed, "init");
    std::normal_distribution<double> nd(0.0, cfg.sigma0());
    p.p0.resize(static_cast<std::size_t>(cfg.m_p));
    for (double& x : p.p0) x = nd(eng);
    ex.test = gen_test_data(cfg.n_test, p.assignment, cfg.L, cfg.sigma_p, seed, cfg.labels);
    return ex;
}

TrainConfig train_config(const RunConfig& cfg, double theta, double eta, int jobs) {
    TrainConfig tc;
    tc.eta = eta;
    tc.E = cfg.E;
    tc.R = cfg.R;
    tc.theta = theta;
    tc.loss_mode = cfg.loss_mode;
    tc.divergence_bound = cfg.divergence_bound;
    tc.snapshot_every = cfg.snapshot_every;
    tc.minibatch = cfg.minibatch;
    tc.jobs = jobs;
    return tc;
}

double resolve_eta(const RunConfig& cfg, const Problem& prob, double theta) {
    if (cfg.eta) return *cfg.eta;
    return search_eta(prob, train_config(cfg, theta, cfg.eta_start), cfg.eta_start);
}

std::uint64_t replicate_seed(const RunConfig& cfg, int rep) {
    return derive_seed(cfg.seed, "replicate", static_cast<std::uint64_t>(rep));
}

ErrorReport empirical_error(const FederationState& state, double theta, const std::vector<ClientDataset>& test,
                            const ClassPrompts& cp, const EncoderWeights& enc) {
    if (test.empty()) throw InvalidArgument("empirical_error: no test sets");
    if (test.size() != state.client_local.size()) throw DimensionError("empirical_error: one test set per client");
    ErrorReport rep;
    long long wrong_total = 0;
    for (std::size_t k = 0; k < test.size(); ++k) {
        const auto& d = test[k];
        if (d.n() == 0) throw InvalidArgument("empirical_error: empty test set for client " + std::to_string(k));
        const Vec hp = mixed_text_feature(enc, state.server_global, state.client_local[k], cp.p_plus, theta);
        const Vec hm = mixed_text_feature(enc, state.server_global, state.client_local[k], cp.p_minus, theta);
        long long wrong = 0;
        for (int i = 0; i < d.n(); ++i) {
            auto g = d.g.row(static_cast<std::size_t>(i));
            const int pred = similarity(g, hp) - similarity(g, hm) >= 0.0 ? 1 : -1;
            wrong += pred != d.y[static_cast<std::size_t>(i)];
        }
        rep.per_client.push_back(double(wrong) / d.n());
        rep.per_client_n.push_back(d.n());
        wrong_total += wrong;
        rep.n += d.n();
    }
    rep.pooled = double(wrong_total) / double(rep.n);
    rep.stderr_ = std::sqrt(rep.pooled * (1.0 - rep.pooled) / double(rep.n));
    return rep;
}

json PointResult::to_json() const {
    return {{"theta", theta},
            {"replicate", replicate},
            {"seed", seed},
            {"key", key},
            {"eta", eta},
            {"emp_error", num(emp_error)},
            {"emp_stderr", num(emp_stderr)},
            {"analytic_error", num(analytic_error)},
            {"a", num(a)},
            {"b", num(b)},
            {"rho", num(rho)},
            {"theta_star", num(theta_star)},
            {"advantage_upper", num(advantage_upper)},
            {"chi_mean", num(chi_mean)},
            {"phi_server_norm", num(phi_server_norm)},
            {"phi_client_norm", num(phi_client_norm)},
            {"attenuation_ok", attenuation_ok},
            {"diverged", diverged}};
}

PointResult PointResult::from_json(const json& j) {
    PointResult p;
    p.theta = j.at("theta").get<double>();
    p.replicate = j.at("replicate").get<int>();
    p.seed = j.at("seed").get<std::uint64_t>();
    p.key = j.at("key").get<std::string>();
    p.eta = j.at("eta").get<double>();
    p.emp_error = unnum(j.at("emp_error"));
    p.emp_stderr = unnum(j.at("emp_stderr"));
    p.analytic_error = unnum(j.at("analytic_error"));
    p.a = unnum(j.at("a"));
    p.b = unnum(j.at("b"));
    p.rho = unnum(j.at("rho"));
    p.theta_star = unnum(j.at("theta_star"));
    p.advantage_upper = unnum(j.at("advantage_upper"));
    p.chi_mean = unnum(j.at("chi_mean"));
    p.phi_server_norm = unnum(j.at("phi_server_norm"));
    p.phi_client_norm = unnum(j.at("phi_client_norm"));
    p.attenuation_ok = j.at("attenuation_ok").get<bool>();
    p.diverged = j.at("diverged").get<bool>();
    return p;
}

std::string point_key(const RunConfig& cfg, double theta, int rep) {
    return hash_hex(to_json(cfg).dump() + "|theta=" + fmt17(theta) + "|rep=" + std::to_string(rep));
}

PointResult run_point(const RunConfig& cfg, double theta, int rep, int jobs) {
    PointResult pt;
    pt.theta = theta;
    pt.replicate = rep;
    pt.seed = replicate_seed(cfg, rep);
    pt.key = point_key(cfg, theta, rep);

    const Experiment ex = build_experiment(cfg, pt.seed);
    const Problem& prob = ex.prob;
    pt.eta = resolve_eta(cfg, prob, theta);
    const RunResult run = run_promptfolio(prob, train_config(cfg, theta, pt.eta, jobs));
    const auto& st = run.state;

    if (cfg.n_test > 0) {
        const ErrorReport er = empirical_error(st, theta, ex.test, prob.cp, prob.enc);
        pt.emp_error = er.pooled;
        pt.emp_stderr = er.stderr_;
    } else {
        pt.emp_error = pt.emp_stderr = kNaN;
    }

    const int K = prob.assignment.K;
    double an = 0.0, sa = 0.0, sb = 0.0, sr = 0.0, sts = 0.0, sup = 0.0, schi = 0.0;
    int valid = 0, valid_up = 0;
    for (int k = 0; k < K; ++k) {
        const Vec F = feature_difference(prob.enc, st.server_global, st.client_local[k], theta, prob.cp);
        an += analytic_client_error(F, prob.assignment.pi[k], cfg.S, cfg.sigma_p) / K;
        schi += chi(prob.assignment, prob.bank, k) / K;
        const AbRho e = estimate_ab_rho(prob.enc, st.server_global, st.client_local[k], prob.cp, prob.assignment, k,
                                        cfg.sigma_p);
        if (e.degenerate || !(e.b > 0.0)) continue;
        try {
            const ThetaStar ts = theta_star(e.a, e.b, e.rho);
            sa += e.a;
            sb += e.b;
            sr += e.rho;
            sts += ts.value;
            ++valid;
            if (e.a > 0.0) {
                sup += advantage_interval(e.a, e.b, e.rho).upper;
                ++valid_up;
            }
        } catch (const DegenerateError&) {
        }
    }
    pt.analytic_error = an;
    pt.chi_mean = schi;
    pt.a = valid ? sa / valid : kNaN;
    pt.b = valid ? sb / valid : kNaN;
    pt.rho = valid ? sr / valid : kNaN;
    pt.theta_star = valid ? sts / valid : kNaN;
    pt.advantage_upper = valid_up ? sup / valid_up : kNaN;

    const auto& server_last = run.traj.server.snaps.back();
    pt.phi_server_norm = norm(server_last.phi);
    const std::vector<double> w = prob.weights();
    double wsum = 0.0;
    for (double x : w) wsum += x;
    double cn = 0.0;
    for (int k = 0; k < K; ++k) cn += norm(run.traj.client_global[k].snaps.back().phi) / K;
    pt.phi_client_norm = cn;
    for (int l = 0; l < cfg.L; ++l) {
        double bound = 0.0, scale = 0.0;
        for (int k = 0; k < K; ++k) {
            const double v = std::fabs(run.traj.client_global[k].snaps.back().phi[l]);
            bound += w[k] / wsum * v;
            scale = std::max(scale, v);
        }
        if (std::fabs(server_last.phi[l]) > bound + 1e-10 * (1.0 + scale)) pt.attenuation_ok = false;
    }
    return pt;
}

ThetaCurve theta_curve(const RunConfig& cfg, const Vec& grid, int jobs, const PointStore* store) {
    if (grid.empty()) throw InvalidArgument("theta_curve: empty grid");
    const int T = static_cast<int>(grid.size());
    const int Rp = cfg.replicates;
    ThetaCurve c;
    c.theta = grid;
    c.points.assign(static_cast<std::size_t>(T), std::vector<PointResult>(static_cast<std::size_t>(Rp)));
    std::vector<char> fresh(static_cast<std::size_t>(T * Rp), 0);

    parallel_for(T * Rp, jobs, [&](int idx) {
        const int i = idx / Rp, r = idx % Rp;
        if (store && store->load) {
            if (auto hit = store->load(point_key(cfg, grid[i], r))) {
                c.points[i][r] = *hit;
                return;
            }
        }
        c.points[i][r] = run_point(cfg, grid[i], r, 1);
        fresh[static_cast<std::size_t>(idx)] = 1;
    });
    if (store && store->save)
        for (int idx = 0; idx < T * Rp; ++idx)
            if (fresh[static_cast<std::size_t>(idx)]) store->save(c.points[idx / Rp][idx % Rp]);

    double ts = 0.0;
    int tsn = 0;
    for (int i = 0; i < T; ++i) {
        double e = 0.0, v = 0.0, an = 0.0;
        for (const auto& p : c.points[i]) {
            e += p.emp_error / Rp;
            v += p.emp_stderr * p.emp_stderr;
            an += p.analytic_error / Rp;
            if (std::isfinite(p.theta_star)) {
                ts += p.theta_star;
                ++tsn;
            }
        }
        c.error.push_back(e);
        c.stderr_.push_back(std::sqrt(v) / Rp);
        c.analytic.push_back(an);
    }
    auto argmin = [](const Vec& v) {
        int best = 0;
        for (int i = 1; i < static_cast<int>(v.size()); ++i)
            if (v[i] < v[best]) best = i;
        return best;
    };
    c.argmin = argmin(c.error);
    c.argmin_analytic = argmin(c.analytic);
    c.theta_opt = grid[c.argmin];
    c.theta_star_mean = tsn ? ts / tsn : kNaN;
    return c;
}

SweepResult sweep_theta(const RunConfig& cfg, const Vec& grid, int jobs, const PointStore* store) {
    SweepResult s;
    s.axis = "theta";
    s.config_hash = config_hash(cfg);
    s.curves.push_back(theta_curve(cfg, grid, jobs, store));
    s.grid = {cfg.theta};
    s.theta_opt = {s.curves[0].theta_opt};
    s.chi_mean = {s.curves[0].points[0][0].chi_mean};
    s.order_prediction = {kNaN};
    return s;
}

namespace {

double order_for(const RunConfig& c, double chi_mean) {
    if (c.K < 2) return kNaN;
    const double root_m = std::sqrt(double(1 + c.S + c.L));
    const double snr_g = c.norm_global / (c.sigma_p * root_m);
    const double snr_k = c.norm_local / (c.sigma_p * root_m);
    return theta_star_order(c.K, chi_mean, snr_g, snr_k);
}

double chi_over_reps(const ThetaCurve& c) {
    double s = 0.0;
    for (const auto& p : c.points[0]) s += p.chi_mean;
    return s / double(c.points[0].size());
}

}  // namespace

SweepResult sweep_heterogeneity(const RunConfig& cfg, const Vec& alphas, int jobs, const PointStore* store) {
    SweepResult s;
    s.axis = "heterogeneity";
    s.config_hash = config_hash(cfg);
    s.grid = alphas;
    for (double alpha : alphas) {
        RunConfig c = cfg;
        c.policy = {PolicyKind::dirichlet, alpha};
        s.curves.push_back(theta_curve(c, cfg.theta_grid, jobs, store));
        s.theta_opt.push_back(s.curves.back().theta_opt);
        s.chi_mean.push_back(chi_over_reps(s.curves.back()));
        s.order_prediction.push_back(order_for(c, s.chi_mean.back()));
    }
    return s;
}

SweepResult sweep_clients(const RunConfig& cfg, const std::vector<int>& Ks, int jobs, const PointStore* store) {
    SweepResult s;
    s.axis = "clients";
    s.config_hash = config_hash(cfg);
    for (int K : Ks) {
        RunConfig c = cfg;
        c.K = K;
        if (cfg.n_mode == "fixed_total") c.n_k = std::max(1, cfg.K * cfg.n_k / K);
        s.grid.push_back(K);
        s.curves.push_back(theta_curve(c, cfg.theta_grid, jobs, store));
        s.theta_opt.push_back(s.curves.back().theta_opt);
        s.chi_mean.push_back(chi_over_reps(s.curves.back()));
        s.order_prediction.push_back(order_for(c, s.chi_mean.back()));
    }
    return s;
}

TrendCheck check_non_increasing(const SweepResult& sweep) {
    TrendCheck t;
    for (std::size_t i = 1; i < sweep.curves.size(); ++i) {
        const ThetaCurve& prev = sweep.curves[i - 1];
        const ThetaCurve& cur = sweep.curves[i];
        if (cur.theta_opt <= prev.theta_opt + 1e-12) continue;
        const int jp = prev.argmin, jc = cur.argmin;
        bool tie = false;
        if (jc - jp == 1) {
            auto close = [&](const ThetaCurve& c) {
                return std::fabs(c.error[jc] - c.error[jp]) <= c.stderr_[jc] + c.stderr_[jp];
            };
            tie = close(prev) || close(cur);
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "step %zu: optimal theta rises %.3f -> %.3f (%s)", i, prev.theta_opt,
                      cur.theta_opt, tie ? "tie within stderr" : "violation");
        t.notes.push_back(buf);
        if (!tie) t.ok = false;
    }
    return t;
}

ValleyCheck check_interior_valley(const ThetaCurve& c, double k_stderr) {
    ValleyCheck v;
    const std::size_t n = c.error.size();
    if (n < 3) return v;
    std::size_t best = 1;
    for (std::size_t i = 2; i + 1 < n; ++i)
        if (c.error[i] < c.error[best]) best = i;
    v.interior_min = c.error[best];
    v.endpoint_min = std::min(c.error.front(), c.error.back());
    v.margin = v.endpoint_min - v.interior_min;
    const double need0 = k_stderr * std::max(c.stderr_[best], c.stderr_.front());
    const double need1 = k_stderr * std::max(c.stderr_[best], c.stderr_.back());
    v.needed = std::max(need0, need1);
    v.ok = c.error.front() - v.interior_min > need0 && c.error.back() - v.interior_min > need1;
    return v;
}

json SweepResult::to_json() const {
    json j;
    j["axis"] = axis;
    j["grid"] = grid;
    j["config_hash"] = config_hash;
    j["theta_opt"] = theta_opt;
    j["chi_mean"] = json::array();
    for (double x : chi_mean) j["chi_mean"].push_back(num(x));
    j["order_prediction"] = json::array();
    for (double x : order_prediction) j["order_prediction"].push_back(num(x));
    j["curves"] = json::array();
    for (const auto& c : curves) {
        json cj;
        cj["theta"] = c.theta;
        cj["error"] = c.error;
        cj["stderr"] = c.stderr_;
        cj["analytic"] = c.analytic;
        cj["theta_opt"] = c.theta_opt;
        cj["theta_opt_analytic"] = c.theta[c.argmin_analytic];
        cj["theta_star_mean"] = num(c.theta_star_mean);
        const ValleyCheck v = check_interior_valley(c);
        cj["interior_valley"] = {{"ok", v.ok}, {"margin", v.margin}, {"needed", v.needed}};
        j["curves"].push_back(cj);
    }
    const TrendCheck t = check_non_increasing(*this);
    j["trend_non_increasing"] = t.ok;
    j["trend_notes"] = t.notes;
    return j;
}

void SweepResult::write_csv(std::ostream& os) const {
    os << "axis,axis_value,theta,error,stderr,analytic,a,b,rho,theta_star,advantage_upper,phi_server_norm,"
          "is_opt\n";
    os.precision(12);
    for (std::size_t c = 0; c < curves.size(); ++c) {
        const auto& cv = curves[c];
        for (std::size_t i = 0; i < cv.theta.size(); ++i) {
            double a = 0, b = 0, rho = 0, ts = 0, up = 0, phi = 0;
            const double n = double(cv.points[i].size());
            for (const auto& p : cv.points[i]) {
                a += p.a / n;
                b += p.b / n;
                rho += p.rho / n;
                ts += p.theta_star / n;
                up += p.advantage_upper / n;
                phi += p.phi_server_norm / n;
            }
            auto f = [](double x) { return std::isfinite(x) ? std::to_string(x) : std::string("nan"); };
            os << axis << ',' << (axis == "theta" ? cv.theta[i] : grid[c]) << ',' << cv.theta[i] << ','
               << cv.error[i] << ',' << cv.stderr_[i] << ',' << cv.analytic[i] << ',' << f(a) << ',' << f(b) << ','
               << f(rho) << ',' << f(ts) << ',' << f(up) << ',' << f(phi) << ','
               << (static_cast<int>(i) == cv.argmin ? 1 : 0) << '\n';
        }
    }
}

}  // namespace promptfolio
