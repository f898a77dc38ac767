#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "promptfolio/feature_space.hpp"
#include "promptfolio/linalg.hpp"

namespace promptfolio {

// zero: p_c = 0 for both classes (the text feature is then exactly Wp).
// gaussian: i.i.d. N(0, scale^2) entries per class.
// aligned: p_+ = scale * sum_r w_r/|w_r|^2 and p_- = -p_+, so W p_+ = +scale on every row.
enum class ClassPromptMode { zero, gaussian, aligned };

std::string to_string(ClassPromptMode mode);
ClassPromptMode class_mode_from_string(const std::string& s);

struct ClassPrompts {
    Vec p_plus;
    Vec p_minus;
    ClassPromptMode mode = ClassPromptMode::aligned;
    double scale = 1.0;
    std::uint64_t seed = 0;

    const Vec& of(int y) const { return y > 0 ? p_plus : p_minus; }
};

ClassPrompts make_class_prompts(ClassPromptMode mode, double scale, const EncoderWeights& enc, std::uint64_t seed);

// h = relu(Wp + Wp_c) - relu(-Wp + Wp_c), row-wise
Vec text_feature(const EncoderWeights& enc, std::span<const double> p, std::span<const double> p_c);
Vec mixed_text_feature(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L,
                       std::span<const double> p_c, double theta);
double similarity(std::span<const double> g, std::span<const double> h);
double margin(std::span<const double> g, int y, const EncoderWeights& enc, std::span<const double> p_G,
              std::span<const double> p_L, double theta, const ClassPrompts& cp);

// Latent-space forms, u = Wp and c = Wp_c.
double relu(double x);
double relu_grad(double x);  // 0 at x = 0
double text_row(double u, double c);
double text_row_grad(double u, double c);
Vec text_feature_latent(std::span<const double> u, std::span<const double> c);

// F = h_mix(p_+) - h_mix(p_-), the vector a sample's margin is taken against.
Vec feature_difference(const EncoderWeights& enc, std::span<const double> p_G, std::span<const double> p_L,
                       double theta, const ClassPrompts& cp);

void check_theta(double theta);

}  // namespace promptfolio
