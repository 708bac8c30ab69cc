#pragma once

#include <cstddef>

// Dense row-major compute kernels. Each kernel exists twice: a plain serial
// reference and an OpenMP version that parallelizes over independent output
// rows. Every output element is produced by the same sequence of floating
// point operations in both, so results agree bitwise for any thread count.

namespace kdiff::kernels {

enum class Trans { No, Yes };

namespace serial {

/// C[m,n] (+)= op(A)[m,k] * op(B)[k,n]
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols);
void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols);
/// Normalizes each row to zero mean and unit variance; stores 1/std per row.
void layernorm_rows(const double* in, double* out, double* rstd, std::size_t rows,
                    std::size_t cols, double eps);
void layernorm_rows_backward(const double* y, const double* rstd, const double* dy, double* dx,
                             std::size_t rows, std::size_t cols);

}  // namespace serial

namespace parallel {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);
void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols);
void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols);
void layernorm_rows(const double* in, double* out, double* rstd, std::size_t rows,
                    std::size_t cols, double eps);
void layernorm_rows_backward(const double* y, const double* rstd, const double* dy, double* dx,
                             std::size_t rows, std::size_t cols);

}  // namespace parallel

// The graph calls these.
using parallel::gemm;
using parallel::layernorm_rows;
using parallel::layernorm_rows_backward;
using parallel::softmax_rows;
using parallel::softmax_rows_backward;

}  // namespace kdiff::kernels
