#include "promptfolio/theory.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include "promptfolio/errors.hpp"
#include "promptfolio/rng.hpp"

namespace promptfolio {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double noise_norm(std::span<const double> F, int S) {
    double s = 0.0;
    for (std::size_t r = static_cast<std::size_t>(1 + S); r < F.size(); ++r) s += F[r] * F[r];
    return std::sqrt(s);
}

double expected_mu(std::span<const double> F, const Vec& pi) {
    double mu = 0.0;
    for (std::size_t s = 0; s < pi.size(); ++s)
        if (pi[s] != 0.0) mu += pi[s] * (F[0] + F[s + 1]);
    return mu;
}

}  // namespace

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

GaussianTestModel gaussian_model_from_F(std::span<const double> F, int S, int s, double sigma_p) {
    if (s < 1 || s > S || F.size() < static_cast<std::size_t>(1 + S)) throw DimensionError("gaussian model: bad index");
    return {F[0] + F[static_cast<std::size_t>(s)], sigma_p * noise_norm(F, S), "analytic"};
}

GaussianTestModel gaussian_test_params(const EncoderWeights& enc, std::span<const double> p_G,
                                       std::span<const double> p_L, double theta, const ClassPrompts& cp,
                                       const ClientAssignment& a, int k, double sigma_p) {
    if (k < 0 || k >= a.K) throw InvalidArgument("gaussian_test_params: unknown client");
    const Vec F = feature_difference(enc, p_G, p_L, theta, cp);
    if (a.mixture()) return {expected_mu(F, a.pi[k]), sigma_p * noise_norm(F, a.S), "analytic"};
    return gaussian_model_from_F(F, a.S, a.s[k], sigma_p);
}

double analytic_error(const GaussianTestModel& m) {
    if (m.sigma < 0.0) throw InvalidArgument("analytic_error: negative sigma");
    if (m.sigma == 0.0) {
        if (m.mu == 0.0) throw DegenerateError("analytic_error: mu = 0 and sigma = 0");
        return m.mu > 0.0 ? 0.0 : 1.0;
    }
    return normal_cdf(-m.mu / m.sigma);
}

double analytic_client_error(std::span<const double> F, const Vec& pi, int S, double sigma_p) {
    double e = 0.0;
    for (int s = 1; s <= S; ++s)
        if (pi[static_cast<std::size_t>(s - 1)] != 0.0)
            e += pi[static_cast<std::size_t>(s - 1)] * analytic_error(gaussian_model_from_F(F, S, s, sigma_p));
    return e;
}

McEstimate mc_error(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L, double theta,
                    const ClassPrompts& cp, const ClientAssignment& a, int k, double sigma_p, long long N,
                    std::uint64_t seed) {
    if (N < 1000) throw InvalidArgument("mc_error: need N >= 1000");
    if (k < 0 || k >= a.K) throw InvalidArgument("mc_error: unknown client");
    const Vec F = feature_difference(enc, p_G, p_L, theta, cp);
    const int S = a.S;
    const int L = static_cast<int>(F.size()) - 1 - S;
    Engine eng = make_engine(seed, "mc", static_cast<std::uint64_t>(k));
    std::normal_distribution<double> nd(0.0, 1.0);
    std::discrete_distribution<int> pick(a.pi[k].begin(), a.pi[k].end());
    long long wrong = 0;
    for (long long i = 0; i < N; ++i) {
        const int y = (i % 2 == 0) ? 1 : -1;
        const int s = a.mixture() ? pick(eng) + 1 : a.s[k];
        // <g, F> with g = (y, y e_s, noise)
        double d = y * (F[0] + F[static_cast<std::size_t>(s)]);
        for (int l = 1; l <= L; ++l) d += sigma_p * nd(eng) * F[static_cast<std::size_t>(S + l)];
        const int pred = d >= 0.0 ? 1 : -1;
        wrong += pred != y;
    }
    McEstimate out;
    out.n = N;
    out.estimate = double(wrong) / double(N);
    out.stderr_ = std::sqrt(out.estimate * (1.0 - out.estimate) / double(N));
    return out;
}

double portfolio_ratio(double a, double b, double rho, double theta) {
    if (!(b > 0.0)) throw InvalidArgument("portfolio_ratio: b must be positive");
    if (!(rho >= -1.0 && rho <= 1.0)) throw InvalidArgument("portfolio_ratio: rho outside [-1, 1]");
    check_theta(theta);
    const double u = 1.0 - theta;
    const double var = u * u + 2.0 * rho * theta * u * b + theta * theta * b * b;
    if (!(var > 0.0)) throw DegenerateError("portfolio_ratio: zero mixed variance");
    return (u + theta * a) / std::sqrt(var);
}

ThetaStar theta_star(double a, double b, double rho) {
    if (!(b > 0.0)) throw InvalidArgument("theta_star: b must be positive");
    ThetaStar t;
    t.denominator = (a + b * b) - rho * b * (a + 1.0);
    if (t.denominator == 0.0) throw DegenerateError("theta_star: degenerate denominator");
    t.raw = (a - rho * b) / t.denominator;
    if (t.denominator > 0.0) {
        t.value = std::clamp(t.raw, 0.0, 1.0);
        t.interior = t.raw > 0.0 && t.raw < 1.0;
    } else {
        // The stationary point is a minimiser here; the best mix is an endpoint.
        t.value = a / b > 1.0 ? 1.0 : 0.0;
    }
    return t;
}

nlohmann::json AdvantageInterval::to_json() const {
    auto num = [](double x) -> nlohmann::json { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json("nan"); };
    return {{"Ca", num(Ca)},
            {"Cb", num(Cb)},
            {"Cc", num(Cc)},
            {"radicand", num(radicand)},
            {"complex_radicand", complex_radicand},
            {"degenerate", degenerate},
            {"upper_closed_form", num(upper_closed_form)},
            {"upper", num(upper)},
            {"literal_Ca", num(literal_Ca)},
            {"literal_Cc", num(literal_Cc)},
            {"literal_radicand", num(literal_radicand)}};
}

double advantage_gap(double a, double b, double rho, double theta) {
    return portfolio_ratio(a, b, rho, theta) - ((1.0 - theta) + theta * a / b);
}

AdvantageInterval advantage_interval(double a, double b, double rho) {
    if (!(b > 0.0)) throw InvalidArgument("advantage_interval: b must be positive");
    if (!(a > 0.0)) throw InvalidArgument("advantage_interval: a must be positive");
    if (!(rho >= -1.0 && rho <= 1.0)) throw InvalidArgument("advantage_interval: rho outside [-1, 1]");
    AdvantageInterval r;
    r.Ca = (b - a) * (b * b - 2.0 * rho * b + 1.0);
    r.Cb = (a + b) * (b * b - 1.0) - 4.0 * b * (rho * b - 1.0);
    r.radicand = (a + b) * (a + b) * (b + 1.0) * (b + 1.0) - 8.0 * a * b * b * (rho + 1.0);
    r.complex_radicand = r.radicand < 0.0;
    r.Cc = r.complex_radicand ? kNaN : (b - 1.0) * std::sqrt(r.radicand);
    r.degenerate = r.Ca == 0.0;
    r.upper_closed_form =
        (r.degenerate || r.complex_radicand) ? kNaN : std::clamp((r.Cb - r.Cc) / (2.0 * r.Ca), 0.0, 1.0);

    r.literal_Ca = (b - a) * (b * b + 2.0 * rho * b + 1.0);
    r.literal_radicand = (a + b) * (a + b) * (b + 1.0) * (b + 1.0) - 8.0 * a * b * b * (rho + 1.0) * (rho + 1.0);
    r.literal_Cc = r.literal_radicand < 0.0 ? kNaN : (b - 1.0) * std::sqrt(r.literal_radicand);

    // Advantage at theta <=> b^2 N^2 - (b L)^2 V >= 0 with N = 1+(a-1)t, bL = b+(a-b)t and V the mixed variance.
    // That quartic vanishes at t = 0 and t = 1; Q is what is left.
    using P = std::array<double, 5>;
    auto mul = [](const P& x, const P& y) {
        P z{};
        for (int i = 0; i < 5; ++i)
            for (int j = 0; i + j < 5; ++j) z[i + j] += x[i] * y[j];
        return z;
    };
    const P N{1.0, a - 1.0, 0, 0, 0};
    const P bL{b, a - b, 0, 0, 0};
    const P V{1.0, -2.0 + 2.0 * rho * b, 1.0 - 2.0 * rho * b + b * b, 0, 0};
    P lhs = mul(N, N);
    for (double& x : lhs) x *= b * b;
    const P rhs = mul(mul(bL, bL), V);
    P q{};
    for (int i = 0; i < 5; ++i) q[i] = lhs[i] - rhs[i];
    // q / t, then divide by (t - 1)
    const double c0 = q[1], c1 = q[2], c2 = q[3], c3 = q[4];
    const double d2 = c3, d1 = c2 + d2, d0 = c1 + d1;
    (void)c0;
    const double Q2 = -d2, Q1 = -d1, Q0 = -d0;
    auto Q = [&](double t) { return (Q2 * t + Q1) * t + Q0; };

    std::vector<double> roots;
    const double scale = std::fabs(Q2) + std::fabs(Q1) + std::fabs(Q0);
    if (std::fabs(Q2) <= 1e-14 * scale) {
        if (Q1 != 0.0) roots.push_back(-Q0 / Q1);
    } else {
        const double disc = Q1 * Q1 - 4.0 * Q2 * Q0;
        if (disc >= 0.0) {
            const double sq = std::sqrt(disc);
            const double qq = -0.5 * (Q1 + std::copysign(sq, Q1));
            if (qq != 0.0) {
                roots.push_back(qq / Q2);
                roots.push_back(Q0 / qq);
            } else {
                roots.push_back(0.0);
            }
        }
    }
    std::sort(roots.begin(), roots.end());
    auto negative_after = [&](double t0) {
        const double t = std::min(1.0, t0 + 1e-9);
        return Q(t) < -1e-14 * scale;
    };
    r.upper = 1.0;
    if (Q0 < 0.0 || (Q0 == 0.0 && negative_after(0.0))) {
        r.upper = 0.0;
    } else {
        for (double t : roots) {
            if (t > 0.0 && t < 1.0 && negative_after(t)) {
                r.upper = t;
                break;
            }
        }
    }
    return r;
}

double theta_star_order(int K, double chi_k, double snr_g, double snr_k) {
    if (K < 2) throw DegenerateError("theta_star_order: undefined for K < 2");
    const double Kd = K;
    return (Kd - chi_k) * snr_k / ((Kd * Kd - 1.0) * (Kd * snr_g + chi_k * snr_k));
}

AbRho estimate_ab_rho(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L,
                      const ClassPrompts& cp, const ClientAssignment& a, int k, double sigma_p) {
    if (k < 0 || k >= a.K) throw InvalidArgument("estimate_ab_rho: unknown client");
    const Vec FG = feature_difference(enc, p_G, p_G, 0.0, cp);
    const Vec FL = feature_difference(enc, p_L, p_L, 1.0, cp);
    AbRho out;
    out.mu_G = expected_mu(FG, a.pi[k]);
    out.mu_L = expected_mu(FL, a.pi[k]);
    const double nG = noise_norm(FG, a.S), nL = noise_norm(FL, a.S);
    out.sigma_G = sigma_p * nG;
    out.sigma_L = sigma_p * nL;
    if (out.mu_G == 0.0 || out.sigma_G == 0.0) {
        out.degenerate = true;
        out.note = "global asset has zero mean or zero spread";
        out.a = out.mu_G == 0.0 ? kNaN : out.mu_L / out.mu_G;
        out.b = out.sigma_G == 0.0 ? kNaN : out.sigma_L / out.sigma_G;
        out.rho = kNaN;
        return out;
    }
    out.a = out.mu_L / out.mu_G;
    out.b = out.sigma_L / out.sigma_G;
    if (out.sigma_L == 0.0) {
        out.degenerate = true;
        out.note = "local asset has zero spread (b = 0)";
        out.rho = kNaN;
        return out;
    }
    double ip = 0.0;
    for (std::size_t r = static_cast<std::size_t>(1 + a.S); r < FG.size(); ++r) ip += FG[r] * FL[r];
    out.rho = std::clamp(ip / (nG * nL), -1.0, 1.0);
    return out;
}

}  // namespace promptfolio
