#pragma once

#include <cstdint>
#include <vector>

#include "kdiff/dataset.hpp"
#include "kdiff/tensor.hpp"

namespace kdiff {

/// Mean and covariance of a feature cloud; covariance is row-major dim x dim.
struct GaussianStats {
  std::size_t dim = 0;
  std::vector<double> mean;
  std::vector<double> cov;
};

/// Sample mean and unbiased covariance, accumulated in row order and then
/// symmetrized. Needs at least two rows.
GaussianStats estimate_stats(const std::vector<std::vector<double>>& features);

struct FrechetDiagnostics {
  double min_eigenvalue = 0.0;
  /// Set when an eigenvalue below -1e-6 * trace had to be clamped.
  bool clamped = false;
};

/// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The cross term is
/// evaluated as tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}) with symmetric
/// eigendecompositions, negative eigenvalues clamped at zero.
double frechet_gaussian_distance(const GaussianStats& a, const GaussianStats& b,
                                 FrechetDiagnostics* diagnostics = nullptr);

/// Fixed seeded Gaussian projection of flattened images to a small feature
/// space, which keeps covariance estimates well conditioned.
class FeatureProjection {
 public:
  FeatureProjection(std::size_t input_dim, std::size_t output_dim, std::uint64_t seed);
  std::vector<double> operator()(const Tensor& image) const;
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

 private:
  std::size_t input_dim_;
  std::size_t output_dim_;
  std::vector<double> matrix_;  // output_dim x input_dim
};

GaussianStats image_stats(const std::vector<Tensor>& images, const FeatureProjection& projection);

/// Palette classes used by the binding metric; 0 is background.
inline constexpr int kPaletteClasses = 1 + static_cast<int>(kColors);
/// Nearest palette entry (background, red, green, blue, yellow) by
/// Euclidean distance; ties go to the lower class.
int classify_pixel(double r, double g, double b);

/// Whether every requested object is rendered in its cell: the most frequent
/// non-background class must be the requested colour and that colour's
/// coverage must lie within [0.5, 1.5] of the shape's expected fill.
bool binding_correct(const Tensor& image, const SceneSpec& spec);
double binding_accuracy(const std::vector<Tensor>& images, const std::vector<SceneSpec>& specs);

}  // namespace kdiff
