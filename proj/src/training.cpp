#include "promptfolio/training.hpp"

#include <atomic>
#include <cmath>
#include <exception>
#include <string>
#include <thread>

#include "promptfolio/errors.hpp"

namespace promptfolio {

std::string to_string(LossMode mode) { return mode == LossMode::margin ? "margin" : "paper_similarity"; }

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "margin") return LossMode::margin;
    if (s == "paper_similarity") return LossMode::paper_similarity;
    throw InvalidArgument("unknown loss mode '" + s + "'");
}

double loss(double z) { return z > 0.0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

double loss_slope(double z) {
    if (z > 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

std::vector<double> Problem::weights() const {
    std::vector<double> w;
    for (const auto& d : train) w.push_back(static_cast<double>(d.n()));
    return w;
}

namespace {

Vec mix(const Vec& hG, const Vec& hL, double theta) {
    if (theta == 0.0) return hG;
    if (theta == 1.0) return hL;
    Vec h(hG.size());
    for (std::size_t r = 0; r < h.size(); ++r) h[r] = (1.0 - theta) * hG[r] + theta * hL[r];
    return h;
}

// Latent-space coefficients of the batch-mean loss, split by sample label.
// dLoss/dh_+ = Ap + Am and dLoss/dh_- = Bp + Bm, where h_+/h_- are the class text features.
struct BranchSums {
    Vec Ap, Am, Bp, Bm;
    double loss = 0.0;
};

struct Batch {
    const ClientDataset& data;
    int start = 0;
    int count = 0;

    int index(int j) const { return (start + j) % data.n(); }
};

Batch make_batch(const ClientDataset& data, int minibatch, int step) {
    const int n = data.n();
    if (n == 0) throw InvalidArgument("empty batch");
    if (minibatch <= 0 || minibatch >= n) return {data, 0, n};
    return {data, static_cast<int>((static_cast<long long>(step) * minibatch) % n), minibatch};
}

BranchSums branch_sums(const Batch& b, const Vec& h_plus, const Vec& h_minus, LossMode mode) {
    const std::size_t m = h_plus.size();
    BranchSums s{Vec(m, 0.0), Vec(m, 0.0), Vec(m, 0.0), Vec(m, 0.0), 0.0};
    const double inv_n = 1.0 / b.count;
    for (int j = 0; j < b.count; ++j) {
        const int i = b.index(j);
        auto g = b.data.g.row(static_cast<std::size_t>(i));
        const int y = b.data.y[static_cast<std::size_t>(i)];
        const double sp = dot(g, h_plus);
        const double sm = dot(g, h_minus);
        double ca = 0.0, cb = 0.0;
        if (mode == LossMode::margin) {
            const double z = y * (sp - sm);
            s.loss += loss(z);
            ca = -loss_slope(z) * y * inv_n;
            cb = -ca;
        } else {
            const double sim = y > 0 ? sp : sm;
            s.loss -= loss(-sim);
            const double c = -loss_slope(-sim) * inv_n;
            (y > 0 ? ca : cb) = c;
        }
        Vec& A = y > 0 ? s.Ap : s.Am;
        Vec& B = y > 0 ? s.Bp : s.Bm;
        if (ca != 0.0) axpy(ca, g, A);
        if (cb != 0.0) axpy(cb, g, B);
    }
    s.loss *= inv_n;
    return s;
}

struct LatentGrad {
    Vec d, d_plus, d_minus;
};

LatentGrad latent_grad(const BranchSums& s, const Vec& u, const Vec& cP, const Vec& cM, double pref) {
    const std::size_t m = u.size();
    LatentGrad out{Vec(m), Vec(m), Vec(m)};
    for (std::size_t r = 0; r < m; ++r) {
        const double tp = text_row_grad(u[r], cP[r]);
        const double tm = text_row_grad(u[r], cM[r]);
        out.d[r] = pref * ((s.Ap[r] + s.Am[r]) * tp + (s.Bp[r] + s.Bm[r]) * tm);
        out.d_plus[r] = pref * (s.Ap[r] * tp + s.Bp[r] * tm);
        out.d_minus[r] = pref * (s.Am[r] * tp + s.Bm[r] * tm);
    }
    return out;
}

struct ClassLatent {
    Vec cP, cM;
};

ClassLatent class_latent(const EncoderWeights& enc, const ClassPrompts& cp) {
    if (static_cast<int>(cp.p_plus.size()) != enc.m_p() || static_cast<int>(cp.p_minus.size()) != enc.m_p())
        throw DimensionError("class prompt dimension != m_p");
    return {matvec(enc.W, cp.p_plus), matvec(enc.W, cp.p_minus)};
}

void check_prompt(std::span<const double> p, double bound, const std::string& what) {
    if (!all_finite(p) || norm(p) > bound) throw DivergenceError(what + " exceeded the divergence bound");
}

// One step of a single prompt (the reference runs); same arithmetic as the theta endpoints of the mixed step.
double single_step(Vec& p, const Batch& b, const EncoderWeights& enc, const ClassLatent& cl, double eta,
                   LossMode mode) {
    const Vec u = matvec(enc.W, p);
    const Vec hp = text_feature_latent(u, cl.cP);
    const Vec hm = text_feature_latent(u, cl.cM);
    const BranchSums s = branch_sums(b, hp, hm, mode);
    const LatentGrad lg = latent_grad(s, u, cl.cP, cl.cM, 1.0);
    const Vec g = matvec_t(enc.W, lg.d);
    axpy(-eta, g, p);
    return s.loss;
}

double pooled_loss(const Problem& prob, const ClassLatent& cl, const Vec& pG, const std::vector<Vec>& pL, double theta,
                   LossMode mode, Vec* per_client) {
    double total = 0.0, weight = 0.0;
    const Vec uG = matvec(prob.enc.W, pG);
    const Vec hGp = text_feature_latent(uG, cl.cP), hGm = text_feature_latent(uG, cl.cM);
    for (std::size_t k = 0; k < prob.train.size(); ++k) {
        const Vec uL = matvec(prob.enc.W, pL[k]);
        const Vec hp = mix(hGp, text_feature_latent(uL, cl.cP), theta);
        const Vec hm = mix(hGm, text_feature_latent(uL, cl.cM), theta);
        const Batch b{prob.train[k], 0, prob.train[k].n()};
        const double l = branch_sums(b, hp, hm, mode).loss;
        if (per_client) per_client->push_back(l);
        total += prob.train[k].n() * l;
        weight += prob.train[k].n();
    }
    return total / weight;
}

}  // namespace

PromptGrads grad_prompts(const ClientDataset& batch, const EncoderWeights& enc, std::span<const double> p_G,
                         std::span<const double> p_L, double theta, const ClassPrompts& cp, LossMode mode) {
    check_theta(theta);
    if (batch.n() == 0) throw InvalidArgument("grad_prompts: empty batch");
    if (batch.m() != enc.m()) throw DimensionError("grad_prompts: latent dimension mismatch");
    const ClassLatent cl = class_latent(enc, cp);
    const Vec uG = matvec(enc.W, p_G), uL = matvec(enc.W, p_L);
    const Vec hp = mix(text_feature_latent(uG, cl.cP), text_feature_latent(uL, cl.cP), theta);
    const Vec hm = mix(text_feature_latent(uG, cl.cM), text_feature_latent(uL, cl.cM), theta);
    const BranchSums s = branch_sums(Batch{batch, 0, batch.n()}, hp, hm, mode);
    PromptGrads out;
    out.g_G = matvec_t(enc.W, latent_grad(s, uG, cl.cP, cl.cM, 1.0 - theta).d);
    out.g_L = matvec_t(enc.W, latent_grad(s, uL, cl.cP, cl.cM, theta).d);
    out.loss = s.loss;
    return out;
}

double batch_loss(const ClientDataset& batch, const EncoderWeights& enc, std::span<const double> p_G,
                  std::span<const double> p_L, double theta, const ClassPrompts& cp, LossMode mode) {
    check_theta(theta);
    if (batch.n() == 0) throw InvalidArgument("batch_loss: empty batch");
    const ClassLatent cl = class_latent(enc, cp);
    const Vec uG = matvec(enc.W, p_G), uL = matvec(enc.W, p_L);
    const Vec hp = mix(text_feature_latent(uG, cl.cP), text_feature_latent(uL, cl.cP), theta);
    const Vec hm = mix(text_feature_latent(uG, cl.cM), text_feature_latent(uL, cl.cM), theta);
    return branch_sums(Batch{batch, 0, batch.n()}, hp, hm, mode).loss;
}

void local_update(LocalState& st, const ClientDataset& data, const EncoderWeights& enc, const ClassPrompts& cp,
                  const TrainConfig& cfg, bool track, int step_offset) {
    if (!(cfg.eta > 0.0)) throw InvalidArgument("local_update: eta must be positive");
    if (cfg.E < 1) throw InvalidArgument("local_update: E must be >= 1");
    check_theta(cfg.theta);
    const ClassLatent cl = class_latent(enc, cp);
    const double theta = cfg.theta;
    const int S = data.S, L = data.L;
    Vec noise_sq(static_cast<std::size_t>(L));
    for (int l = 0; l < L; ++l) {
        auto w = enc.W.row(static_cast<std::size_t>(1 + S + l));
        noise_sq[l] = dot(w, w);
    }
    if (track) {
        if (st.acc_G.psi.size() != static_cast<std::size_t>(L)) st.acc_G = PsiPhiAccumulator(L);
        if (st.acc_L.psi.size() != static_cast<std::size_t>(L)) st.acc_L = PsiPhiAccumulator(L);
    }

    Vec inc_p(static_cast<std::size_t>(L)), inc_m(static_cast<std::size_t>(L));
    auto accumulate = [&](PsiPhiAccumulator& acc, const LatentGrad& lg) {
        for (int l = 0; l < L; ++l) {
            inc_p[l] = -cfg.eta * noise_sq[l] * lg.d_plus[static_cast<std::size_t>(1 + S + l)];
            inc_m[l] = -cfg.eta * noise_sq[l] * lg.d_minus[static_cast<std::size_t>(1 + S + l)];
        }
        acc.accumulate(inc_p, inc_m);
    };

    for (int e = 0; e < cfg.E; ++e) {
        const Batch b = make_batch(data, cfg.minibatch, step_offset + e);
        const Vec uG = matvec(enc.W, st.p_G), uL = matvec(enc.W, st.p_L);
        const Vec hp = mix(text_feature_latent(uG, cl.cP), text_feature_latent(uL, cl.cP), theta);
        const Vec hm = mix(text_feature_latent(uG, cl.cM), text_feature_latent(uL, cl.cM), theta);
        const BranchSums s = branch_sums(b, hp, hm, cfg.loss_mode);
        const LatentGrad lgG = latent_grad(s, uG, cl.cP, cl.cM, 1.0 - theta);
        const LatentGrad lgL = latent_grad(s, uL, cl.cP, cl.cM, theta);
        const Vec gG = matvec_t(enc.W, lgG.d);
        const Vec gL = matvec_t(enc.W, lgL.d);
        if (e == 0) {
            st.first_grad_norm_G = norm(gG);
            st.first_grad_norm_L = norm(gL);
        }
        axpy(-cfg.eta, gG, st.p_G);
        axpy(-cfg.eta, gL, st.p_L);
        if (track) {
            accumulate(st.acc_G, lgG);
            accumulate(st.acc_L, lgL);
        }
        check_prompt(st.p_G, cfg.divergence_bound, "client " + std::to_string(data.client) + " global prompt");
        check_prompt(st.p_L, cfg.divergence_bound, "client " + std::to_string(data.client) + " local prompt");
    }
}

Vec fedavg(const std::vector<Vec>& prompts, const std::vector<double>& weights) {
    if (prompts.empty() || prompts.size() != weights.size()) throw DimensionError("fedavg: size mismatch");
    double total = 0.0;
    for (double w : weights) {
        if (!(w > 0.0)) throw InvalidArgument("fedavg: weights must be positive");
        total += w;
    }
    if (!(total > 0.0)) throw InvalidArgument("fedavg: weight sum is zero");
    bool identical = true;
    for (const auto& p : prompts) {
        if (p.size() != prompts.front().size()) throw DimensionError("fedavg: prompt size mismatch");
        identical = identical && p == prompts.front();
    }
    if (identical) return prompts.front();

    const std::size_t d = prompts.front().size();
    Vec out(d, 0.0);
    for (std::size_t k = 0; k < prompts.size(); ++k) axpy(weights[k], prompts[k], out);
    for (std::size_t j = 0; j < d; ++j) {
        out[j] /= total;
        double lo = prompts[0][j], hi = prompts[0][j];
        for (const auto& p : prompts) {
            lo = std::min(lo, p[j]);
            hi = std::max(hi, p[j]);
        }
        out[j] = std::clamp(out[j], lo, hi);
    }
    return out;
}

void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
    {
        std::vector<std::jthread> pool;
        for (int t = 0; t < std::min(jobs, n); ++t) {
            pool.emplace_back([&] {
                for (int i = next++; i < n; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[static_cast<std::size_t>(i)] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

RunResult run_promptfolio(const Problem& prob, const TrainConfig& cfg) {
    check_theta(cfg.theta);
    if (cfg.R < 0) throw InvalidArgument("run_promptfolio: R must be >= 0");
    if (!(cfg.eta > 0.0)) throw InvalidArgument("run_promptfolio: eta must be positive");
    const int K = prob.assignment.K;
    if (static_cast<int>(prob.train.size()) != K) throw DimensionError("run_promptfolio: one dataset per client");
    if (static_cast<int>(prob.p0.size()) != prob.enc.m_p()) throw DimensionError("run_promptfolio: p0 dimension");
    const std::vector<double> w = prob.weights();
    const ClassLatent cl = class_latent(prob.enc, prob.cp);
    const int L = prob.bank.L;

    RunResult res;
    FederationState& st = res.state;
    st.server_global = prob.p0;
    st.client_global.assign(static_cast<std::size_t>(K), prob.p0);
    st.client_local.assign(static_cast<std::size_t>(K), prob.p0);
    st.theta = cfg.theta;
    st.eta = cfg.eta;
    st.E = cfg.E;
    st.R = cfg.R;
    res.record.eta = cfg.eta;

    PsiPhiAccumulator acc_server(L);
    std::vector<PsiPhiAccumulator> acc_G(static_cast<std::size_t>(K), PsiPhiAccumulator(L));
    std::vector<PsiPhiAccumulator> acc_L(static_cast<std::size_t>(K), PsiPhiAccumulator(L));

    TrajectorySet& traj = res.traj;
    traj.server.id = "server";
    for (int k = 0; k < K; ++k) {
        traj.client_global.push_back({"client_global_" + std::to_string(k), {}});
        traj.client_local.push_back({"client_local_" + std::to_string(k), {}});
    }
    auto snap = [&](const Vec& p, const PsiPhiAccumulator& acc, int round) {
        CoeffSnapshot s = decompose(p, prob.p0, prob.bank, round);
        s.psi_acc = acc.psi;
        s.varphi_acc = acc.varphi;
        s.has_acc = true;
        return s;
    };
    auto take_snapshots = [&](int round) {
        res.record.snapshots.push_back({round, st.server_global, st.client_local});
        if (!cfg.track) return;
        traj.server.append(snap(st.server_global, acc_server, round));
        for (int k = 0; k < K; ++k) {
            traj.client_global[k].append(snap(st.client_global[k], acc_G[k], round));
            traj.client_local[k].append(snap(st.client_local[k], acc_L[k], round));
        }
    };
    auto record_loss = [&] {
        Vec per;
        res.record.round_loss.push_back(
            pooled_loss(prob, cl, st.server_global, st.client_local, cfg.theta, cfg.loss_mode, &per));
        res.record.client_loss.push_back(std::move(per));
    };

    take_snapshots(0);
    record_loss();
    const int every = std::max(1, cfg.snapshot_every);

    for (int t = 1; t <= cfg.R; ++t) {
        std::vector<LocalState> ls(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) {
            ls[k].p_G = st.server_global;  // broadcast
            ls[k].p_L = st.client_local[k];
            ls[k].acc_G = acc_server;
            ls[k].acc_L = acc_L[k];
        }
        parallel_for(K, cfg.jobs, [&](int k) {
            local_update(ls[k], prob.train[k], prob.enc, prob.cp, cfg, cfg.track, (t - 1) * cfg.E);
        });
        double gnG = 0.0, gnL = 0.0;
        for (int k = 0; k < K; ++k) {
            st.client_global[k] = std::move(ls[k].p_G);
            st.client_local[k] = std::move(ls[k].p_L);
            acc_G[k] = std::move(ls[k].acc_G);
            acc_L[k] = std::move(ls[k].acc_L);
            gnG += ls[k].first_grad_norm_G / K;
            gnL += ls[k].first_grad_norm_L / K;
        }
        res.record.grad_norm_G.push_back(gnG);
        res.record.grad_norm_L.push_back(gnL);

        st.server_global = fedavg(st.client_global, w);
        if (cfg.track) acc_server = average(acc_G, w);
        st.round = t;
        if (t % every == 0 || t == cfg.R) take_snapshots(t);
        for (int k = 0; k < K; ++k) st.client_global[k] = st.server_global;
        record_loss();
    }
    return res;
}

std::vector<Vec> run_fedavg_single(const Problem& prob, const TrainConfig& cfg) {
    const int K = prob.assignment.K;
    const std::vector<double> w = prob.weights();
    const ClassLatent cl = class_latent(prob.enc, prob.cp);
    std::vector<Vec> traj{prob.p0};
    Vec server = prob.p0;
    for (int t = 1; t <= cfg.R; ++t) {
        std::vector<Vec> copies(static_cast<std::size_t>(K), server);
        for (int k = 0; k < K; ++k) {
            for (int e = 0; e < cfg.E; ++e) {
                single_step(copies[k], make_batch(prob.train[k], cfg.minibatch, (t - 1) * cfg.E + e), prob.enc, cl,
                            cfg.eta, cfg.loss_mode);
                check_prompt(copies[k], cfg.divergence_bound, "fedavg reference");
            }
        }
        server = fedavg(copies, w);
        traj.push_back(server);
    }
    return traj;
}

std::vector<std::vector<Vec>> run_isolated(const Problem& prob, const TrainConfig& cfg) {
    const int K = prob.assignment.K;
    const ClassLatent cl = class_latent(prob.enc, prob.cp);
    std::vector<std::vector<Vec>> out(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        Vec p = prob.p0;
        out[k].push_back(p);
        for (int t = 1; t <= cfg.R; ++t) {
            for (int e = 0; e < cfg.E; ++e) {
                single_step(p, make_batch(prob.train[k], cfg.minibatch, (t - 1) * cfg.E + e), prob.enc, cl, cfg.eta,
                            cfg.loss_mode);
                check_prompt(p, cfg.divergence_bound, "isolated reference");
            }
            out[k].push_back(p);
        }
    }
    return out;
}

double search_eta(const Problem& prob, TrainConfig cfg, double eta_start, int max_halvings) {
    cfg.E = 1;
    cfg.R = 10;
    cfg.track = false;
    cfg.snapshot_every = 1 << 20;
    double eta = eta_start;
    for (int i = 0; i <= max_halvings; ++i, eta *= 0.5) {
        cfg.eta = eta;
        try {
            const auto rl = run_promptfolio(prob, cfg).record.round_loss;
            bool ok = all_finite(rl);
            for (std::size_t j = 1; ok && j < rl.size(); ++j) ok = rl[j] <= rl[j - 1] + 1e-12 * std::fabs(rl[j - 1]);
            if (ok) return eta;
        } catch (const DivergenceError&) {
        }
    }
    throw DivergenceError("search_eta: no stable step size found");
}

}  // namespace promptfolio
