#include "kdiff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "kdiff/error.hpp"
#include "kdiff/rng.hpp"

namespace kdiff {

GaussianStats estimate_stats(const std::vector<std::vector<double>>& features) {
  if (features.size() < 2) fail(ErrorKind::DimensionMismatch, "need at least two feature rows for a covariance");
  const std::size_t d = features.front().size();
  const auto n = static_cast<double>(features.size());
  GaussianStats s{d, std::vector<double>(d, 0.0), std::vector<double>(d * d, 0.0)};
  for (const auto& row : features) {
    if (row.size() != d) fail(ErrorKind::DimensionMismatch, "feature rows differ in length");
    for (std::size_t i = 0; i < d; ++i) s.mean[i] += row[i];
  }
  for (auto& m : s.mean) m /= n;
  std::vector<double> centered(d);
  for (const auto& row : features) {
    for (std::size_t i = 0; i < d; ++i) centered[i] = row[i] - s.mean[i];
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) s.cov[i * d + j] += centered[i] * centered[j];
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      s.cov[i * d + j] /= n - 1.0;
      s.cov[j * d + i] = s.cov[i * d + j];
    }
  }
  return s;
}

namespace {

using Matrix = Eigen::MatrixXd;

Matrix as_matrix(const GaussianStats& s) {
  Matrix m(s.dim, s.dim);
  for (std::size_t i = 0; i < s.dim; ++i) {
    for (std::size_t j = 0; j < s.dim; ++j) m(i, j) = 0.5 * (s.cov[i * s.dim + j] + s.cov[j * s.dim + i]);
  }
  return m;
}

// Eigenvalues clamped at zero; records the most negative one seen.
Eigen::VectorXd clamped_eigenvalues(const Eigen::SelfAdjointEigenSolver<Matrix>& es, FrechetDiagnostics& diag,
                                    double trace) {
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    diag.min_eigenvalue = std::min(diag.min_eigenvalue, ev[i]);
    if (ev[i] < 0.0) {
      if (ev[i] < -1e-6 * std::abs(trace)) diag.clamped = true;
      ev[i] = 0.0;
    }
  }
  return ev;
}

}  // namespace

double frechet_gaussian_distance(const GaussianStats& a, const GaussianStats& b, FrechetDiagnostics* diagnostics) {
  if (a.dim != b.dim || a.mean.size() != a.dim || b.mean.size() != b.dim || a.cov.size() != a.dim * a.dim ||
      b.cov.size() != b.dim * b.dim) {
    fail(ErrorKind::DimensionMismatch,
         "gaussian stats of dimension " + std::to_string(a.dim) + " and " + std::to_string(b.dim));
  }
  FrechetDiagnostics diag;
  double mean_term = 0.0;
  for (std::size_t i = 0; i < a.dim; ++i) {
    const double d = a.mean[i] - b.mean[i];
    mean_term += d * d;
  }
  const Matrix sa = as_matrix(a), sb = as_matrix(b);
  const double trace_a = sa.trace(), trace_b = sb.trace();

  Eigen::SelfAdjointEigenSolver<Matrix> ea(sa);
  const Eigen::VectorXd la = clamped_eigenvalues(ea, diag, trace_a).cwiseSqrt();
  const Matrix root_a = ea.eigenvectors() * la.asDiagonal() * ea.eigenvectors().transpose();
  Matrix inner = root_a * sb * root_a;
  inner = 0.5 * (inner + inner.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Matrix> ei(inner, Eigen::EigenvaluesOnly);
  const double cross = clamped_eigenvalues(ei, diag, inner.trace()).cwiseSqrt().sum();

  if (diagnostics) *diagnostics = diag;
  // Clamping can leave a tiny negative residue for identical inputs.
  return std::max(0.0, mean_term + trace_a + trace_b - 2.0 * cross);
}

FeatureProjection::FeatureProjection(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed)
    : input_dim_(input_dim), output_dim_(output_dim), matrix_(input_dim * output_dim) {
  if (input_dim == 0 || output_dim == 0) fail(ErrorKind::DimensionMismatch, "projection dimensions must be positive");
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (auto& v : matrix_) v = scale * rng.normal();
}

std::vector<double> FeatureProjection::operator()(const Tensor& image) const {
  if (image.numel() != input_dim_) {
    fail(ErrorKind::DimensionMismatch, "projection expects " + std::to_string(input_dim_) + " values, got " +
                                           std::to_string(image.numel()));
  }
  std::vector<double> out(output_dim_, 0.0);
  const auto x = image.data();
  for (std::size_t o = 0; o < output_dim_; ++o) {
    const double* row = matrix_.data() + o * input_dim_;
    double acc = 0.0;
    for (std::size_t i = 0; i < input_dim_; ++i) acc += row[i] * x[i];
    out[o] = acc;
  }
  return out;
}

GaussianStats image_stats(const std::vector<Tensor>& images, const FeatureProjection& projection) {
  std::vector<std::vector<double>> features(images.size());
  const auto n = static_cast<long>(images.size());
#pragma omp parallel for schedule(static)
  for (long i = 0; i < n; ++i) features[i] = projection(images[i]);
  return estimate_stats(features);
}

int classify_pixel(double r, double g, double b) {
  int best = 0;
  double best_d = 0.0;
  for (int k = 0; k < kPaletteClasses; ++k) {
    const auto rgb = k == 0 ? kBackground : color_rgb(static_cast<Color>(k - 1));
    const double d = (r - rgb[0]) * (r - rgb[0]) + (g - rgb[1]) * (g - rgb[1]) + (b - rgb[2]) * (b - rgb[2]);
    if (k == 0 || d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

bool binding_correct(const Tensor& image, const SceneSpec& spec) {
  if (image.rank() != 3 || image.dim(2) != 3 || image.dim(0) % 2 || image.dim(1) % 2) {
    fail(ErrorKind::AlignmentMismatch, "binding metric needs an [h, w, 3] image with even sides, got " +
                                           shape_string(image.shape()));
  }
  const std::size_t h = image.dim(0), w = image.dim(1), ch = h / 2, cw = w / 2;
  for (const auto& o : spec.objects) {
    std::array<std::size_t, kPaletteClasses> counts{};
    const std::size_t top = static_cast<std::size_t>(o.cell / 2) * ch, left = static_cast<std::size_t>(o.cell % 2) * cw;
    for (std::size_t y = top; y < top + ch; ++y) {
      for (std::size_t x = left; x < left + cw; ++x) {
        const std::size_t p = (y * w + x) * 3;
        ++counts[classify_pixel(image[p], image[p + 1], image[p + 2])];
      }
    }
    int dominant = 0;
    for (int k = 1; k < kPaletteClasses; ++k) {
      if (counts[k] > 0 && (dominant == 0 || counts[k] > counts[dominant])) dominant = k;
    }
    const int wanted = 1 + static_cast<int>(o.color);
    if (dominant != wanted) return false;
    const double fill = static_cast<double>(counts[wanted]) / static_cast<double>(ch * cw);
    const double expected = shape_fill_fraction(o.shape, h, w);
    if (fill < 0.5 * expected || fill > 1.5 * expected) return false;
  }
  return true;
}

double binding_accuracy(const std::vector<Tensor>& images, const std::vector<SceneSpec>& specs) {
  if (images.size() != specs.size() || images.empty()) {
    fail(ErrorKind::AlignmentMismatch, std::to_string(images.size()) + " images for " + std::to_string(specs.size()) +
                                           " scene specs");
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < images.size(); ++i) correct += binding_correct(images[i], specs[i]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

}  // namespace kdiff
