#include "kdiff/schedule.hpp"

#include <cmath>

#include "kdiff/error.hpp"

namespace kdiff {

NoiseSchedule NoiseSchedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) fail(ErrorKind::InvalidRange, "schedule needs at least one step");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    fail(ErrorKind::InvalidRange, "need 0 < beta_start <= beta_end < 1, got " +
                                      std::to_string(beta_start) + ", " + std::to_string(beta_end));
  }
  NoiseSchedule s;
  s.steps_ = steps;
  s.beta_start_ = beta_start;
  s.beta_end_ = beta_end;
  s.beta_.resize(steps);
  s.alpha_.resize(steps);
  s.alpha_bar_.resize(steps + 1);
  s.alpha_bar_[0] = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    s.beta_[i] = i == steps - 1 && steps > 1 ? beta_end : beta_start + (beta_end - beta_start) * frac;
    s.alpha_[i] = 1.0 - s.beta_[i];
    s.alpha_bar_[i + 1] = s.alpha_bar_[i] * s.alpha_[i];
  }
  return s;
}

namespace {
void check_step(const NoiseSchedule& s, int t) {
  if (t < 1 || t > s.steps()) {
    fail(ErrorKind::StepOutOfRange,
         "step " + std::to_string(t) + " outside 1.." + std::to_string(s.steps()));
  }
}

void check_same_shape(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    fail(ErrorKind::ShapeMismatch, shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

Tensor combine(double ca, const Tensor& a, double cb, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = ca * a[i] + cb * b[i];
  return out;
}
}  // namespace

double NoiseSchedule::beta(int t) const {
  check_step(*this, t);
  return beta_[t - 1];
}

double NoiseSchedule::alpha(int t) const {
  check_step(*this, t);
  return alpha_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps_) {
    fail(ErrorKind::StepOutOfRange, "step " + std::to_string(t) + " outside 0.." + std::to_string(steps_));
  }
  return alpha_bar_[t];
}

PosteriorCoefficients posterior_coefficients(const NoiseSchedule& schedule, int t) {
  check_step(schedule, t);
  const double a = schedule.alpha(t);
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t - 1);
  return {
      (1.0 - ab_prev) / (1.0 - ab) * std::sqrt(a),
      (1.0 - a) / (1.0 - ab) * std::sqrt(ab_prev),
      std::sqrt((1.0 - ab_prev) * (1.0 - a) / (1.0 - ab)),
  };
}

Tensor diffuse_step(const NoiseSchedule& schedule, const Tensor& x_prev, int t, const Tensor& noise) {
  check_step(schedule, t);
  check_same_shape(x_prev, noise);
  const double a = schedule.alpha(t);
  return combine(std::sqrt(a), x_prev, std::sqrt(1.0 - a), noise);
}

Tensor q_sample(const NoiseSchedule& schedule, const Tensor& x0, int t, const Tensor& eps) {
  check_step(schedule, t);
  check_same_shape(x0, eps);
  const double ab = schedule.alpha_bar(t);
  return combine(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

Tensor predict_x0(const NoiseSchedule& schedule, const Tensor& xt, int t, const Tensor& eps_hat) {
  check_step(schedule, t);
  check_same_shape(xt, eps_hat);
  const double ab = schedule.alpha_bar(t);
  const double noise_coef = std::sqrt(1.0 - ab);
  const double inv = 1.0 / std::sqrt(ab);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < xt.numel(); ++i) out[i] = (xt[i] - noise_coef * eps_hat[i]) * inv;
  return out;
}

Tensor ddpm_step(const NoiseSchedule& schedule, const Tensor& xt, int t, const Tensor& x0_hat,
                 const Tensor& noise) {
  check_same_shape(xt, x0_hat);
  check_same_shape(xt, noise);
  const auto c = posterior_coefficients(schedule, t);
  Tensor out(xt.shape());
  for (std::size_t i = 0; i < xt.numel(); ++i) {
    out[i] = c.xt_coef * xt[i] + c.x0_coef * x0_hat[i] + c.sigma * noise[i];
  }
  return out;
}

Tensor ddim_step(const NoiseSchedule& schedule, const Tensor& xt, int t, int t_prev,
                 const Tensor& eps_hat) {
  if (!(0 <= t_prev && t_prev < t && t <= schedule.steps())) {
    fail(ErrorKind::StepOrderViolation, "need 0 <= t_prev < t <= T, got t=" + std::to_string(t) +
                                            " t_prev=" + std::to_string(t_prev));
  }
  const Tensor x0 = predict_x0(schedule, xt, t, eps_hat);
  const double ab_prev = schedule.alpha_bar(t_prev);
  return combine(std::sqrt(ab_prev), x0, std::sqrt(1.0 - ab_prev), eps_hat);
}

}  // namespace kdiff
