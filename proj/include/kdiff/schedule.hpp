#pragma once

#include <vector>

#include "kdiff/tensor.hpp"

namespace kdiff {

/// Precomputed noise tables. Steps are 1-based: beta(t), alpha(t) for
/// t in 1..T and alpha_bar(t) for t in 0..T with alpha_bar(0) == 1.
class NoiseSchedule {
 public:
  /// beta linearly spaced from beta_start to beta_end inclusive.
  static NoiseSchedule linear(int steps, double beta_start, double beta_end);

  int steps() const noexcept { return steps_; }
  double beta_start() const noexcept { return beta_start_; }
  double beta_end() const noexcept { return beta_end_; }

  double beta(int t) const;
  double alpha(int t) const;
  double alpha_bar(int t) const;

  const std::vector<double>& alpha_bar_table() const noexcept { return alpha_bar_; }

 private:
  int steps_ = 0;
  double beta_start_ = 0.0;
  double beta_end_ = 0.0;
  std::vector<double> beta_;
  std::vector<double> alpha_;
  std::vector<double> alpha_bar_;
};

/// Coefficients of the ancestral update
///   x_{t-1} = xt_coef * x_t + x0_coef * x0_hat + sigma * noise.
struct PosteriorCoefficients {
  double xt_coef;
  double x0_coef;
  double sigma;
};

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& schedule, int t);

/// One forward noising step: sqrt(alpha_t) x_prev + sqrt(1 - alpha_t) noise.
Tensor diffuse_step(const NoiseSchedule& schedule, const Tensor& x_prev, int t, const Tensor& noise);

/// Closed-form marginal: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps);

/// Inverts q_sample given a noise estimate.
Tensor predict_x0(const NoiseSchedule& schedule, const Tensor& xt, int t, const Tensor& eps_hat);

Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& xt, int t, const Tensor& x0_hat,
                 const Tensor& noise);

/// Deterministic (eta = 0) DDIM transition from t to t_prev < t.
Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& xt, int t, int t_prev,
                 const Tensor& eps_hat);

}  // namespace kdiff
