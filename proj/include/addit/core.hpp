#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace addit {

// Contract violations (bad shapes, broken preconditions) vs. malformed data
// files. The CLI maps these to distinct exit codes.
struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct contract_error : error {
    using error::error;
};
struct schema_error : error {
    using error::error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw contract_error(msg);
}

// Dense row-major matrix of doubles. Small sizes only; no views, no BLAS.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

    double* row(std::size_t i) { return a.data() + i * cols; }
    const double* row(std::size_t i) const { return a.data() + i * cols; }

    bool empty() const { return rows == 0 || cols == 0; }
};

// C = A * B
inline Mat matmul(const Mat& A, const Mat& B) {
    require(A.cols == B.rows, "matmul: inner dimensions differ");
    Mat C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double* ci = C.row(i);
        for (std::size_t k = 0; k < A.cols; ++k) {
            const double aik = ai[k];
            if (aik == 0.0) continue;
            const double* bk = B.row(k);
            for (std::size_t j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return C;
}

inline double dot(const double* x, const double* y, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x[i] * y[i];
    return s;
}

// Row-wise layer norm, no affine terms.
inline Mat layer_norm(const Mat& x, double eps = 1e-6) {
    Mat y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const double* xi = x.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) mean += xi[j];
        mean /= static_cast<double>(x.cols);
        double var = 0.0;
        for (std::size_t j = 0; j < x.cols; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(x.cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        double* yi = y.row(i);
        for (std::size_t j = 0; j < x.cols; ++j) yi[j] = (xi[j] - mean) * inv;
    }
    return y;
}

inline double gelu(double x) {
    return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0)));
}

inline bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline int mod_wrap(int x, int m) {
    int r = x % m;
    return r < 0 ? r + m : r;
}

}  // namespace addit
