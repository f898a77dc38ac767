#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "promptfolio/data_model.hpp"
#include "promptfolio/errors.hpp"
#include "promptfolio/feature_space.hpp"

using namespace promptfolio;

namespace {

Mat gram(const FeatureBank& b) {
    Mat G(b.rows.rows, b.rows.rows);
    for (std::size_t i = 0; i < b.rows.rows; ++i)
        for (std::size_t j = 0; j < b.rows.rows; ++j) G(i, j) = dot(b.rows.row(i), b.rows.row(j));
    return G;
}

}  // namespace

TEST_CASE("smallest bank is orthonormal") {
    const FeatureBank b = build_feature_bank(1, 1, 3, {1, 1, 1}, 42);
    const Mat G = gram(b);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(std::fabs(G(i, j) - (i == j ? 1.0 : 0.0)) < 1e-10);
}

TEST_CASE("gram diagonal follows requested norms") {
    const FeatureBank b = build_feature_bank(2, 4, 7, {2.0, 1.0, 0.5}, 5);
    const Mat G = gram(b);
    const double want[] = {4, 1, 1, 0.25, 0.25, 0.25, 0.25};
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(std::fabs(G(i, i) - want[i]) < 1e-12 * want[i]);
        for (std::size_t j = 0; j < i; ++j) CHECK(std::fabs(G(i, j)) < 1e-10 * std::sqrt(G(i, i) * G(j, j)));
    }
}

TEST_CASE("larger bank stays orthogonal") {
    const FeatureBank b = build_feature_bank(8, 32, 64, {0.6, 1.0, 4.48}, 9);
    const Mat G = gram(b);
    for (std::size_t i = 0; i < G.rows; ++i) {
        CHECK(std::fabs(std::sqrt(G(i, i)) - b.requested_norm(static_cast<int>(i))) <
              1e-12 * b.requested_norm(static_cast<int>(i)));
        for (std::size_t j = 0; j < i; ++j) CHECK(std::fabs(G(i, j)) < 1e-10 * std::sqrt(G(i, i) * G(j, j)));
    }
}

TEST_CASE("bank is deterministic in the seed") {
    const FeatureBank a = build_feature_bank(3, 5, 12, {1, 2, 3}, 77);
    const FeatureBank b = build_feature_bank(3, 5, 12, {1, 2, 3}, 77);
    const FeatureBank c = build_feature_bank(3, 5, 12, {1, 2, 3}, 78);
    CHECK(a.rows.data == b.rows.data);
    CHECK(a.rows.data != c.rows.data);
}

TEST_CASE("bank rejects impossible shapes") {
    CHECK_THROWS_AS(build_feature_bank(2, 4, 6, {1, 1, 1}, 1), DimensionError);
    CHECK_THROWS_AS(build_feature_bank(1, 1, 3, {0, 1, 1}, 1), InvalidArgument);
    CHECK_THROWS_AS(build_feature_bank(0, 1, 3, {1, 1, 1}, 1), InvalidArgument);
}

TEST_CASE("W rows are the bank rows") {
    const FeatureBank b = build_feature_bank(1, 1, 5, {1.5, 1, 1}, 3);
    const EncoderWeights enc = assemble_W(b);
    CHECK(enc.m() == 3);
    CHECK(enc.m_p() == 5);
    for (std::size_t j = 0; j < 5; ++j) CHECK(enc.W(0, j) == b.mu_g()[j]);

    Vec unit(b.mu_g().begin(), b.mu_g().end());
    for (double& x : unit) x /= 1.5 * 1.5;
    const Vec e1 = matvec(enc.W, unit);
    CHECK(e1[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(e1[1]) < 1e-12);
    CHECK(std::fabs(e1[2]) < 1e-12);

    Vec sum(5);
    for (std::size_t j = 0; j < 5; ++j) sum[j] = b.mu_g()[j] + b.nu(1)[j];
    const Vec h = matvec(enc.W, sum);
    CHECK(h[0] == doctest::Approx(2.25).epsilon(1e-12));
    CHECK(h[1] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::fabs(h[2]) < 1e-12);
}

TEST_CASE("snr by hand") {
    // m counts latent rows; 1 + S + L = 4 and 16 below
    const FeatureBank b4 = build_feature_bank(1, 2, 4, {1.0, 1.0, 1.0}, 1);
    CHECK(snr(b4, 0.5, 0) == doctest::Approx(1.0));
    const FeatureBank b16 = build_feature_bank(1, 14, 16, {1.0, 2.0, 1.0}, 1);
    CHECK(snr(b16, 1.0, 1) == doctest::Approx(0.5));
    const FeatureBank b4x2 = build_feature_bank(1, 2, 4, {2.0, 1.0, 1.0}, 1);
    CHECK(snr(b4x2, 0.5, 0) == doctest::Approx(2.0 * snr(b4, 0.5, 0)));
}

TEST_CASE("chi counts shared local features") {
    const FeatureBank b = build_feature_bank(3, 2, 8, {1, 1, 1}, 2);
    const auto shared = assignment_from_indices({1, 1, 1, 1}, 3);
    for (int k = 0; k < 4; ++k) CHECK(chi(shared, b, k) == doctest::Approx(4.0));
    const auto distinct = assignment_from_indices({1, 2, 3}, 3);
    for (int k = 0; k < 3; ++k) CHECK(chi(distinct, b, k) == doctest::Approx(1.0));
    const auto mixed = assignment_from_indices({1, 1, 2, 3}, 3);
    CHECK(chi(mixed, b, 0) == doctest::Approx(2.0));
    CHECK(chi(mixed, b, 1) == doctest::Approx(2.0));
    CHECK(chi(mixed, b, 2) == doctest::Approx(1.0));
    CHECK(chi(mixed, b, 3) == doctest::Approx(1.0));
}

TEST_CASE("bank json round trip") {
    const FeatureBank b = build_feature_bank(2, 3, 9, {0.5, 1.5, 2.5}, 4);
    const FeatureBank c = bank_from_json(to_json(b));
    CHECK(c.S == 2);
    CHECK(c.L == 3);
    CHECK(c.rows.data == b.rows.data);
}
