#include "promptfolio/encoders.hpp"

#include <cmath>

#include "promptfolio/errors.hpp"
#include "promptfolio/rng.hpp"

namespace promptfolio {

std::string to_string(ClassPromptMode mode) {
    switch (mode) {
        case ClassPromptMode::zero: return "zero";
        case ClassPromptMode::gaussian: return "gaussian";
        case ClassPromptMode::aligned: return "aligned";
    }
    return "?";
}

ClassPromptMode class_mode_from_string(const std::string& s) {
    for (auto m : {ClassPromptMode::zero, ClassPromptMode::gaussian, ClassPromptMode::aligned})
        if (to_string(m) == s) return m;
    throw InvalidArgument("unknown class prompt mode '" + s + "'");
}

ClassPrompts make_class_prompts(ClassPromptMode mode, double scale, const EncoderWeights& enc, std::uint64_t seed) {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw InvalidArgument("class prompt scale must be >= 0");
    ClassPrompts cp;
    cp.mode = mode;
    cp.scale = scale;
    cp.seed = seed;
    const auto mp = static_cast<std::size_t>(enc.m_p());
    cp.p_plus.assign(mp, 0.0);
    cp.p_minus.assign(mp, 0.0);
    switch (mode) {
        case ClassPromptMode::zero: break;
        case ClassPromptMode::gaussian: {
            Engine eng = make_engine(seed, "class");
            std::normal_distribution<double> nd(0.0, scale);
            for (auto& x : cp.p_plus) x = nd(eng);
            for (auto& x : cp.p_minus) x = nd(eng);
            break;
        }
        case ClassPromptMode::aligned:
            for (std::size_t r = 0; r < enc.W.rows; ++r) {
                auto w = enc.W.row(r);
                axpy(scale / dot(w, w), w, cp.p_plus);
            }
            for (std::size_t j = 0; j < mp; ++j) cp.p_minus[j] = -cp.p_plus[j];
            break;
    }
    return cp;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }
double relu_grad(double x) { return x > 0.0 ? 1.0 : 0.0; }
double text_row(double u, double c) { return relu(u + c) - relu(-u + c); }
double text_row_grad(double u, double c) { return relu_grad(u + c) + relu_grad(-u + c); }

Vec text_feature_latent(std::span<const double> u, std::span<const double> c) {
    if (u.size() != c.size()) throw DimensionError("text_feature: size mismatch");
    Vec h(u.size());
    for (std::size_t r = 0; r < u.size(); ++r) h[r] = text_row(u[r], c[r]);
    return h;
}

Vec text_feature(const EncoderWeights& enc, std::span<const double> p, std::span<const double> p_c) {
    if (static_cast<int>(p.size()) != enc.m_p() || static_cast<int>(p_c.size()) != enc.m_p())
        throw DimensionError("text_feature: prompt dimension != m_p");
    return text_feature_latent(matvec(enc.W, p), matvec(enc.W, p_c));
}

void check_theta(double theta) {
    if (!(theta >= 0.0 && theta <= 1.0)) throw InvalidArgument("theta must lie in [0, 1]");
}

Vec mixed_text_feature(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L,
                       std::span<const double> p_c, double theta) {
    check_theta(theta);
    const Vec hG = text_feature(enc, p_G, p_c);
    const Vec hL = text_feature(enc, p_L, p_c);
    // Endpoints return the pure feature untouched.
    if (theta == 0.0) return hG;
    if (theta == 1.0) return hL;
    Vec h(hG.size());
    for (std::size_t r = 0; r < h.size(); ++r) h[r] = (1.0 - theta) * hG[r] + theta * hL[r];
    return h;
}

double similarity(std::span<const double> g, std::span<const double> h) {
    if (g.size() != h.size()) throw DimensionError("similarity: size mismatch");
    return dot(g, h);
}

double margin(std::span<const double> g, int y, const EncoderWeights& enc, std::span<const double> p_G,
              std::span<const double> p_L, double theta, const ClassPrompts& cp) {
    if (y != 1 && y != -1) throw InvalidArgument("margin: label must be +1 or -1");
    const double sp = similarity(g, mixed_text_feature(enc, p_G, p_L, cp.p_plus, theta));
    const double sm = similarity(g, mixed_text_feature(enc, p_G, p_L, cp.p_minus, theta));
    return y * (sp - sm);
}

Vec feature_difference(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L,
                       double theta, const ClassPrompts& cp) {
    const Vec hp = mixed_text_feature(enc, p_G, p_L, cp.p_plus, theta);
    const Vec hm = mixed_text_feature(enc, p_G, p_L, cp.p_minus, theta);
    return sub(hp, hm);
}

}  // namespace promptfolio
