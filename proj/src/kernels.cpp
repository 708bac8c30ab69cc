#include "kdiff/kernels.hpp"

#include <cmath>
#include <vector>

namespace kdiff::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

std::vector<double> transpose_copy(const double* src, std::size_t rows, std::size_t cols) {
  std::vector<double> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

// One output row of C. `b` is always [k,n] row-major here; `a_stride` and
// `a_step` select row i of A or column i of a transposed A.
inline void gemm_row(std::size_t i, std::size_t n, std::size_t k, const double* a, Trans ta,
                     std::size_t m, const double* b, double* c, bool accumulate) {
  double* crow = c + i * n;
  if (!accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
  }
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = (ta == Trans::No) ? a[i * k + p] : a[p * m + i];
    const double* brow = b + p * n;
#pragma omp simd
    for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
  }
}

inline void softmax_row(const double* in, double* out, std::size_t cols) {
  double mx = in[0];
  for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, in[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    out[j] = std::exp(in[j] - mx);
    sum += out[j];
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < cols; ++j) out[j] *= inv;
}

inline void softmax_backward_row(const double* y, const double* dy, double* dx,
                                 std::size_t cols) {
  double dot = 0.0;
  for (std::size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
  for (std::size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
}

inline void layernorm_row(const double* in, double* out, double* rstd, std::size_t cols,
                          double eps) {
  double mean = 0.0;
  for (std::size_t j = 0; j < cols; ++j) mean += in[j];
  mean /= static_cast<double>(cols);
  double var = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    const double d = in[j] - mean;
    var += d * d;
  }
  var /= static_cast<double>(cols);
  const double r = 1.0 / std::sqrt(var + eps);
  *rstd = r;
  for (std::size_t j = 0; j < cols; ++j) out[j] = (in[j] - mean) * r;
}

// y is the normalized output; dx accumulates.
inline void layernorm_backward_row(const double* y, double rstd, const double* dy, double* dx,
                                   std::size_t cols) {
  double mean_dy = 0.0;
  double mean_dy_y = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    mean_dy += dy[j];
    mean_dy_y += dy[j] * y[j];
  }
  mean_dy /= static_cast<double>(cols);
  mean_dy_y /= static_cast<double>(cols);
  for (std::size_t j = 0; j < cols; ++j) dx[j] += rstd * (dy[j] - mean_dy - y[j] * mean_dy_y);
}

}  // namespace

namespace serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  std::vector<double> bt;
  if (tb == Trans::Yes) {
    bt = transpose_copy(b, n, k);
    b = bt.data();
  }
  for (std::size_t i = 0; i < m; ++i) gemm_row(i, n, k, a, ta, m, b, c, accumulate);
}

void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(in + r * cols, out + r * cols, cols);
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    softmax_backward_row(y + r * cols, dy + r * cols, dx + r * cols, cols);
  }
}

void layernorm_rows(const double* in, double* out, double* rstd, std::size_t rows,
                    std::size_t cols, double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    layernorm_row(in + r * cols, out + r * cols, rstd + r, cols, eps);
  }
}

void layernorm_rows_backward(const double* y, const double* rstd, const double* dy, double* dx,
                             std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    layernorm_backward_row(y + r * cols, rstd[r], dy + r * cols, dx + r * cols, cols);
  }
}

}  // namespace serial

namespace parallel {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  std::vector<double> bt;
  if (tb == Trans::Yes) {
    bt = transpose_copy(b, n, k);
    b = bt.data();
  }
  const auto rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n * k > kParallelWork)
  for (long i = 0; i < rows; ++i) {
    gemm_row(static_cast<std::size_t>(i), n, k, a, ta, m, b, c, accumulate);
  }
}

void softmax_rows(const double* in, double* out, std::size_t rows, std::size_t cols) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long r = 0; r < nrows; ++r) softmax_row(in + r * cols, out + r * cols, cols);
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, std::size_t rows,
                           std::size_t cols) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long r = 0; r < nrows; ++r) {
    softmax_backward_row(y + r * cols, dy + r * cols, dx + r * cols, cols);
  }
}

void layernorm_rows(const double* in, double* out, double* rstd, std::size_t rows,
                    std::size_t cols, double eps) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long r = 0; r < nrows; ++r) {
    layernorm_row(in + r * cols, out + r * cols, rstd + r, cols, eps);
  }
}

void layernorm_rows_backward(const double* y, const double* rstd, const double* dy, double* dx,
                             std::size_t rows, std::size_t cols) {
  const auto nrows = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (long r = 0; r < nrows; ++r) {
    layernorm_backward_row(y + r * cols, rstd[r], dy + r * cols, dx + r * cols, cols);
  }
}

}  // namespace parallel
}  // namespace kdiff::kernels
