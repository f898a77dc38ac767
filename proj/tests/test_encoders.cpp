#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "promptfolio/encoders.hpp"
#include "promptfolio/errors.hpp"
#include "promptfolio/feature_space.hpp"

using namespace promptfolio;

namespace {

struct Fixture {
    FeatureBank bank = build_feature_bank(2, 3, 8, {1.2, 0.8, 1.5}, 31);
    EncoderWeights enc = assemble_W(bank);
    std::mt19937_64 eng{5};

    Vec rand(double sd = 1.0) {
        std::normal_distribution<double> nd(0.0, sd);
        Vec v(static_cast<std::size_t>(enc.m_p()));
        for (double& x : v) x = nd(eng);
        return v;
    }
};

bool same_bits(const Vec& a, const Vec& b) {
    return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("zero class prompt gives the linear feature") {
    Fixture f;
    const Vec p = f.rand();
    const Vec zero(p.size(), 0.0);
    const Vec h = text_feature(f.enc, p, zero);
    const Vec wp = matvec(f.enc.W, p);
    for (std::size_t r = 0; r < h.size(); ++r) CHECK(h[r] == doctest::Approx(wp[r]).epsilon(1e-14));
}

TEST_CASE("zero prompt gives zero feature") {
    Fixture f;
    const Vec pc = f.rand();
    const Vec h = text_feature(f.enc, Vec(pc.size(), 0.0), pc);
    for (double x : h) CHECK(x == 0.0);
}

TEST_CASE("one row by hand") {
    CHECK(text_row(1.0, 0.3) == doctest::Approx(1.3));
    CHECK(text_row(-1.0, 0.3) == doctest::Approx(-1.3));
    CHECK(text_row(0.2, 0.5) == doctest::Approx(0.4));  // both branches active: 0.7 - 0.3
    CHECK(text_row(0.2, -0.5) == 0.0);
    CHECK(text_row_grad(0.2, 0.5) == 2.0);
    CHECK(text_row_grad(1.0, 0.3) == 1.0);
    CHECK(relu_grad(0.0) == 0.0);
}

TEST_CASE("mixing endpoints are exact") {
    Fixture f;
    const Vec pG = f.rand(), pL = f.rand(), pc = f.rand(0.3);
    CHECK(same_bits(mixed_text_feature(f.enc, pG, pL, pc, 0.0), text_feature(f.enc, pG, pc)));
    CHECK(same_bits(mixed_text_feature(f.enc, pG, pL, pc, 1.0), text_feature(f.enc, pL, pc)));
    CHECK_THROWS_AS(mixed_text_feature(f.enc, pG, pL, pc, 1.5), InvalidArgument);
}

TEST_CASE("equal prompts make theta irrelevant") {
    Fixture f;
    const Vec p = f.rand(), pc = f.rand(0.3);
    const Vec h0 = mixed_text_feature(f.enc, p, p, pc, 0.0);
    for (double t : {0.2, 0.5, 0.9}) {
        const Vec h = mixed_text_feature(f.enc, p, p, pc, t);
        for (std::size_t r = 0; r < h.size(); ++r) CHECK(h[r] == doctest::Approx(h0[r]).epsilon(1e-14));
    }
}

TEST_CASE("half mix with zero class prompt") {
    Fixture f;
    const Vec pG = f.rand(), pL = f.rand();
    const Vec zero(pG.size(), 0.0);
    Vec sum(pG.size());
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] = pG[j] + pL[j];
    const Vec want = matvec(f.enc.W, sum);
    const Vec h = mixed_text_feature(f.enc, pG, pL, zero, 0.5);
    for (std::size_t r = 0; r < h.size(); ++r) CHECK(h[r] == doctest::Approx(0.5 * want[r]).epsilon(1e-13));
}

TEST_CASE("similarity") {
    CHECK(similarity(Vec{1, 0, 0}, Vec{0, 3, 0}) == 0.0);
    CHECK(similarity(Vec{0, 2, 0}, Vec{0, 2, 0}) == 4.0);
    std::mt19937_64 eng(8);
    std::normal_distribution<double> nd;
    Vec a(37), b(37);
    for (std::size_t i = 0; i < 37; ++i) {
        a[i] = nd(eng);
        b[i] = nd(eng);
    }
    double loop = 0.0;
    for (std::size_t i = 0; i < 37; ++i) loop += a[i] * b[i];
    CHECK(std::fabs(similarity(a, b) - loop) < 1e-14);
}

TEST_CASE("margin symmetry") {
    Fixture f;
    const Vec pG = f.rand(), pL = f.rand();
    ClassPrompts same;
    same.p_plus = f.rand(0.5);
    same.p_minus = same.p_plus;
    Vec g(static_cast<std::size_t>(f.enc.m()));
    for (double& x : g) x = 0.7;
    CHECK(margin(g, 1, f.enc, pG, pL, 0.3, same) == 0.0);

    const ClassPrompts cp = make_class_prompts(ClassPromptMode::gaussian, 0.5, f.enc, 4);
    const double zp = margin(g, 1, f.enc, pG, pL, 0.3, cp);
    const double zm = margin(g, -1, f.enc, pG, pL, 0.3, cp);
    CHECK(zp == -zm);
}

TEST_CASE("margin in a one-row latent") {
    // one feature, m_p = 1, |w| = 2
    const FeatureBank b = [] {
        FeatureBank fb;
        fb.S = 0;
        fb.L = 0;
        fb.m_p = 1;
        fb.rows = Mat(1, 1);
        fb.rows(0, 0) = 2.0;
        return fb;
    }();
    EncoderWeights enc;
    enc.W = b.rows;
    ClassPrompts cp;
    cp.p_plus = {0.25};   // c = 0.5
    cp.p_minus = {-0.25};
    // p_G = 0.1 -> u = 0.2; p_L = 0.4 -> u = 0.8; theta = 0.25
    // h(u, c) = relu(u + c) - relu(c - u)
    // plus:  hG = 0.7 - 0.3 = 0.4, hL = 1.3 - 0 = 1.3 -> 0.3 + 0.325 = 0.625
    // minus: hG = 0 - 0 = 0 (c = -0.5, u = 0.2), hL = 0.3 - 0 = 0.3 -> 0.075
    const Vec g = {1.5};
    const double z = margin(g, 1, enc, Vec{0.1}, Vec{0.4}, 0.25, cp);
    CHECK(z == doctest::Approx(1.5 * (0.625 - 0.075)).epsilon(1e-14));
}

TEST_CASE("aligned class prompts saturate every row") {
    Fixture f;
    const ClassPrompts cp = make_class_prompts(ClassPromptMode::aligned, 0.7, f.enc, 0);
    const Vec c = matvec(f.enc.W, cp.p_plus);
    for (double x : c) CHECK(x == doctest::Approx(0.7).epsilon(1e-12));
    for (std::size_t j = 0; j < cp.p_plus.size(); ++j) CHECK(cp.p_minus[j] == -cp.p_plus[j]);
}

TEST_CASE("feature difference matches two text features") {
    Fixture f;
    const Vec pG = f.rand(), pL = f.rand();
    const ClassPrompts cp = make_class_prompts(ClassPromptMode::gaussian, 0.4, f.enc, 12);
    const Vec F = feature_difference(f.enc, pG, pL, 0.6, cp);
    const Vec hp = mixed_text_feature(f.enc, pG, pL, cp.p_plus, 0.6);
    const Vec hm = mixed_text_feature(f.enc, pG, pL, cp.p_minus, 0.6);
    for (std::size_t r = 0; r < F.size(); ++r) CHECK(F[r] == doctest::Approx(hp[r] - hm[r]).epsilon(1e-13));
}
