#pragma once

#include <cstddef>

// Dense kernels behind the layer math. Every kernel exists twice: the serial
// reference under kernels::ref, and the OpenMP entry point in kernels:: that
// splits the outer loop across threads. Both share the same per-row body, so
// outputs are bit-identical no matter the thread count; tests assert this.
namespace fsl::kernels {

namespace detail {

// One output row of C = A * B.  a_row[k], b[k x n], c_row[n].
inline void matmul_row(const double* a_row, const double* b, double* c_row,
                       std::size_t k, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) c_row[j] = 0.0;
    for (std::size_t t = 0; t < k; ++t) {
        const double av = a_row[t];
        const double* b_row = b + t * n;
        for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
}

// One output row of C = A * B^T.  a_row[p], b[n x p], c_row[n].
inline void matmul_nt_row(const double* a_row, const double* b, double* c_row,
                          std::size_t p, std::size_t n) {
    for (std::size_t j = 0; j < n; ++j) {
        const double* b_row = b + j * p;
        double acc = 0.0;
        for (std::size_t t = 0; t < p; ++t) acc += a_row[t] * b_row[t];
        c_row[j] = acc;
    }
}

// Row i of C += A^T * B where A is [m x k], B is [m x n], C is [k x n].
inline void matmul_tn_acc_row(const double* a, const double* b, double* c_row,
                              std::size_t i, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t r = 0; r < m; ++r) {
        const double av = a[r * k + i];
        const double* b_row = b + r * n;
        for (std::size_t j = 0; j < n; ++j) c_row[j] += av * b_row[j];
    }
}

}  // namespace detail

namespace ref {
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p, std::size_t n);
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void add_bias(double* y, const double* bias, std::size_t rows, std::size_t n);
void colsum_acc(const double* y, double* bias_grad, std::size_t rows, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n);
void softmax_rows(double* x, std::size_t rows, std::size_t n);
}  // namespace ref

// C[m x n] = A[m x k] * B[k x n]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
// C[m x n] = A[m x p] * B[n x p]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t p, std::size_t n);
// C[k x n] += A[m x k]^T * B[m x n]
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);
void add_bias(double* y, const double* bias, std::size_t rows, std::size_t n);
void colsum_acc(const double* y, double* bias_grad, std::size_t rows, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
void relu_backward(const double* x, const double* dy, double* dx, std::size_t n);
// In-place numerically stable softmax over each row.
void softmax_rows(double* x, std::size_t rows, std::size_t n);

}  // namespace fsl::kernels
