#include "promptfolio/linalg.hpp"

#include <cmath>

#include "promptfolio/errors.hpp"

namespace promptfolio {

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: size mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs(std::span<const double> a) {
    double m = 0.0;
    for (double x : a) m = std::max(m, std::fabs(x));
    return m;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionError("axpy: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

Vec sub(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("sub: size mismatch");
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

Vec matvec(const Mat& A, std::span<const double> x) {
    if (x.size() != A.cols) throw DimensionError("matvec: size mismatch");
    Vec out(A.rows);
    for (std::size_t i = 0; i < A.rows; ++i) out[i] = dot(A.row(i), x);
    return out;
}

Vec matvec_t(const Mat& A, std::span<const double> v) {
    if (v.size() != A.rows) throw DimensionError("matvec_t: size mismatch");
    Vec out(A.cols, 0.0);
    for (std::size_t i = 0; i < A.rows; ++i) {
        if (v[i] == 0.0) continue;
        axpy(v[i], A.row(i), out);
    }
    return out;
}

bool all_finite(std::span<const double> a) {
    for (double x : a)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace promptfolio
