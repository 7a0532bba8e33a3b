#include "fsl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "fsl/parallel.hpp"

namespace fsl::kernels {

namespace {

// Minimum work before a kernel bothers spawning a team.
constexpr std::size_t kMatmulGrain = 1 << 14;
constexpr std::size_t kElemGrain = 1 << 15;

inline void softmax_row(double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

}  // namespace

namespace ref {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) detail::matmul_row(a + i * k, b, c + i * n, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) detail::matmul_nt_row(a + i * p, b, c + i * n, p, n);
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k; ++i) detail::matmul_tn_acc_row(a, b, c + i * n, i, m, k, n);
}

void add_bias(double* y, const double* bias, std::size_t rows, std::size_t n) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* row = y + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
    }
}

void colsum_acc(const double* y, double* bias_grad, std::size_t rows, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) acc += y[i * n + j];
        bias_grad[j] += acc;
    }
}

void relu(const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void softmax_rows(double* x, std::size_t rows, std::size_t n) {
    for (std::size_t i = 0; i < rows; ++i) softmax_row(x + i * n, n);
}

}  // namespace ref

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const bool par = parallel::active() && m >= 2 && m * k * n >= kMatmulGrain;
    const std::int64_t mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < mm; ++i) {
        detail::matmul_row(a + i * k, b, c + i * n, k, n);
    }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p, std::size_t n) {
    const bool par = parallel::active() && m >= 2 && m * p * n >= kMatmulGrain;
    const std::int64_t mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < mm; ++i) {
        detail::matmul_nt_row(a + i * p, b, c + i * n, p, n);
    }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    const bool par = parallel::active() && k >= 2 && m * k * n >= kMatmulGrain;
    const std::int64_t kk = static_cast<std::int64_t>(k);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < kk; ++i) {
        detail::matmul_tn_acc_row(a, b, c + i * n, i, m, k, n);
    }
}

void add_bias(double* y, const double* bias, std::size_t rows, std::size_t n) {
    const bool par = parallel::active() && rows >= 2 && rows * n >= kElemGrain;
    const std::int64_t rr = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < rr; ++i) {
        double* row = y + i * n;
        for (std::size_t j = 0; j < n; ++j) row[j] += bias[j];
    }
}

void colsum_acc(const double* y, double* bias_grad, std::size_t rows, std::size_t n) {
    // Column sums accumulate serially per column; parallel across columns.
    const bool par = parallel::active() && n >= 2 && rows * n >= kElemGrain;
    const std::int64_t nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t j = 0; j < nn; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows; ++i) acc += y[i * n + j];
        bias_grad[j] += acc;
    }
}

void relu(const double* x, double* y, std::size_t n) {
    const bool par = parallel::active() && n >= kElemGrain;
    const std::int64_t nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < nn; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, std::size_t n) {
    const bool par = parallel::active() && n >= kElemGrain;
    const std::int64_t nn = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < nn; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

void softmax_rows(double* x, std::size_t rows, std::size_t n) {
    const bool par = parallel::active() && rows >= 2 && rows * n >= kElemGrain;
    const std::int64_t rr = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (par)
    for (std::int64_t i = 0; i < rr; ++i) softmax_row(x + i * n, n);
}

}  // namespace fsl::kernels
