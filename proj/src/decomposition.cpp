#include "promptfolio/decomposition.hpp"

#include <cmath>

#include "promptfolio/errors.hpp"

namespace promptfolio {

CoeffSnapshot decompose(std::span<const double> p, std::span<const double> p0, const FeatureBank& bank, int round) {
    if (static_cast<int>(p.size()) != bank.m_p || p0.size() != p.size())
        throw DimensionError("decompose: prompt dimension != m_p");
    CoeffSnapshot s;
    s.round = round;
    Vec delta = sub(p, p0);
    s.delta_norm = norm(delta);
    Vec resid = delta;
    Vec c(static_cast<std::size_t>(bank.m()));
    for (int r = 0; r < bank.m(); ++r) {
        auto f = bank.rows.row(static_cast<std::size_t>(r));
        c[r] = dot(delta, f);
        axpy(-c[r] / dot(f, f), f, resid);
    }
    s.beta = c[0];
    s.gamma.assign(c.begin() + 1, c.begin() + 1 + bank.S);
    s.phi.assign(c.begin() + 1 + bank.S, c.end());
    s.residual_norm = norm(resid);
    return s;
}

void PsiPhiAccumulator::accumulate(std::span<const double> plus, std::span<const double> minus) {
    if (plus.size() != psi.size() || minus.size() != varphi.size())
        throw DimensionError("accumulate_psi_phi: size mismatch");
    for (std::size_t l = 0; l < psi.size(); ++l) {
        psi[l] += plus[l];
        varphi[l] += minus[l];
    }
}

Vec PsiPhiAccumulator::total() const {
    Vec t(psi.size());
    for (std::size_t l = 0; l < t.size(); ++l) t[l] = psi[l] + varphi[l];
    return t;
}

PsiPhiAccumulator average(const std::vector<PsiPhiAccumulator>& accs, const std::vector<double>& weights) {
    if (accs.empty() || accs.size() != weights.size()) throw DimensionError("average: size mismatch");
    double total = 0.0;
    for (double w : weights) total += w;
    PsiPhiAccumulator out(static_cast<int>(accs.front().psi.size()));
    for (std::size_t k = 0; k < accs.size(); ++k) {
        axpy(weights[k] / total, accs[k].psi, out.psi);
        axpy(weights[k] / total, accs[k].varphi, out.varphi);
    }
    return out;
}

void CoeffTrajectory::append(CoeffSnapshot s) {
    if (!snaps.empty() && s.round <= snaps.back().round)
        throw InvalidArgument("trajectory " + id + ": rounds must be strictly increasing");
    snaps.push_back(std::move(s));
}

nlohmann::json DynamicsReport::to_json() const {
    nlohmann::json j;
    j["rounds"] = rounds;
    j["beta_bar"] = beta_bar;
    j["gamma_bar"] = gamma_bar;
    j["phi_bar_norm"] = phi_bar_norm;
    j["beta_local_mean"] = beta_local_mean;
    j["predicted_beta_order"] = predicted_beta_order;
    j["predicted_gamma_order"] = predicted_gamma_order;
    j["signs_ok"] = signs_ok;
    j["early_monotone"] = early_monotone;
    j["violations"] = violations;
    j["loss_threshold_round"] = loss_threshold_round;
    return j;
}

DynamicsReport dynamics_diagnostics(const TrajectorySet& traj, const FeatureBank& bank, const ClientAssignment& a,
                                    double sigma_p, int n_bar, std::span<const double> round_loss,
                                    double loss_threshold, double tol, int early_rounds) {
    if (traj.server.snaps.size() < 2) throw InvalidArgument("dynamics_diagnostics: need at least two snapshots");
    DynamicsReport rep;
    const int K = a.K;

    for (const auto& s : traj.server.snaps) {
        rep.rounds.push_back(s.round);
        rep.beta_bar.push_back(s.beta);
        double g = 0.0;
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < a.S; ++j) g += a.pi[k][j] * s.gamma[j];
        rep.gamma_bar.push_back(g / K);
        rep.phi_bar_norm.push_back(norm(s.phi));
    }
    if (!traj.client_local.empty()) {
        for (std::size_t i = 0; i < traj.client_local.front().snaps.size(); ++i) {
            double b = 0.0;
            for (const auto& t : traj.client_local) b += t.snaps[i].beta;
            rep.beta_local_mean.push_back(b / double(traj.client_local.size()));
        }
    }

    if (sigma_p > 0.0) {
        const double sg = snr(bank, sigma_p, 0);
        rep.predicted_beta_order = n_bar * K * sg * sg;
        for (int k = 0; k < K; ++k) {
            const double sk = snr(bank, sigma_p, a.s[k]);
            rep.predicted_gamma_order.push_back(n_bar * chi(a, bank, k) * sk * sk);
        }
    }

    auto check_series = [&](const Vec& v, const std::string& name) {
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (v[i] < -tol * (1.0 + std::fabs(v.back()))) {
                rep.signs_ok = false;
                rep.violations.push_back(name + " negative at round " + std::to_string(rep.rounds[i]));
                break;
            }
        }
        const std::size_t n = std::min<std::size_t>(v.size(), static_cast<std::size_t>(early_rounds) + 1);
        for (std::size_t i = 1; i < n; ++i) {
            if (v[i] < v[i - 1] - tol * (1.0 + std::fabs(v[i - 1]))) {
                rep.early_monotone = false;
                rep.violations.push_back(name + " decreasing early at round " + std::to_string(rep.rounds[i]));
                break;
            }
        }
    };
    check_series(rep.beta_bar, "beta_bar");
    check_series(rep.gamma_bar, "gamma_bar");

    for (std::size_t i = 0; i < round_loss.size(); ++i) {
        if (round_loss[i] < loss_threshold) {
            rep.loss_threshold_round = static_cast<int>(i);
            break;
        }
    }
    return rep;
}

void write_csv(std::ostream& os, const TrajectorySet& traj) {
    const CoeffTrajectory* any = &traj.server;
    if (any->snaps.empty()) return;
    const std::size_t S = any->snaps.front().gamma.size();
    const std::size_t L = any->snaps.front().phi.size();
    os << "round,prompt,beta";
    for (std::size_t s = 1; s <= S; ++s) os << ",gamma_" << s;
    for (std::size_t l = 1; l <= L; ++l) os << ",phi_" << l;
    for (std::size_t l = 1; l <= L; ++l) os << ",psi_" << l;
    for (std::size_t l = 1; l <= L; ++l) os << ",varphi_" << l;
    os << ",residual\n";
    os.precision(17);
    auto emit = [&](const CoeffTrajectory& t) {
        for (const auto& s : t.snaps) {
            os << s.round << ',' << t.id << ',' << s.beta;
            for (double v : s.gamma) os << ',' << v;
            for (double v : s.phi) os << ',' << v;
            for (std::size_t l = 0; l < L; ++l) os << ',' << (s.has_acc ? s.psi_acc[l] : 0.0);
            for (std::size_t l = 0; l < L; ++l) os << ',' << (s.has_acc ? s.varphi_acc[l] : 0.0);
            os << ',' << s.residual_norm << '\n';
        }
    };
    emit(traj.server);
    for (const auto& t : traj.client_global) emit(t);
    for (const auto& t : traj.client_local) emit(t);
}

}  // namespace promptfolio
