#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace promptfolio {

using Vec = std::vector<double>;

// Dense row-major matrix. Sizes here never exceed a few hundred, so nothing fancier is needed.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {data.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {data.data() + i * cols, cols}; }
};

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double max_abs(std::span<const double> a);

// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

Vec sub(std::span<const double> a, std::span<const double> b);

// A x, with x of length A.cols
Vec matvec(const Mat& A, std::span<const double> x);
// A^T v, with v of length A.rows; rows are accumulated in ascending order
Vec matvec_t(const Mat& A, std::span<const double> v);

bool all_finite(std::span<const double> a);

}  // namespace promptfolio
