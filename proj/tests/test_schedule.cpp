#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <cstring>

#include "helpers.hpp"
#include "kdiff/sampler.hpp"
#include "kdiff/schedule.hpp"

using namespace kdiff;
using kdiff::test::expect_error;
using quad = boost::multiprecision::cpp_bin_float_quad;

namespace {

const NoiseSchedule& standard() {
  static const NoiseSchedule s = NoiseSchedule::linear(1000, 1e-4, 0.02);
  return s;
}

// alpha_bar_t as a 113-bit product of the linearly spaced betas.
quad alpha_bar_oracle(int T, int t) {
  const quad start = quad(1) / 10000, end = quad(2) / 100;
  quad prod = 1;
  for (int s = 1; s <= t; ++s) prod *= 1 - (start + (end - start) * (s - 1) / (T - 1));
  return prod;
}

}  // namespace

TEST_CASE("single-step schedule") {
  const auto s = NoiseSchedule::linear(1, 0.5, 0.5);
  REQUIRE(s.alpha_bar_table().size() == 2);
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1) == 0.5);
}

TEST_CASE("invalid ranges") {
  expect_error(ErrorKind::InvalidRange, [] { NoiseSchedule::linear(10, 0.02, 1e-4); });
  expect_error(ErrorKind::InvalidRange, [] { NoiseSchedule::linear(0, 1e-4, 0.02); });
  expect_error(ErrorKind::InvalidRange, [] { NoiseSchedule::linear(10, 0.0, 0.02); });
  expect_error(ErrorKind::InvalidRange, [] { NoiseSchedule::linear(10, 1e-4, 1.0); });
}

TEST_CASE("alpha_bar against a high-precision product") {
  const auto& s = standard();
  for (int t : {1, 2, 10, 100, 500, 999, 1000}) {
    const double oracle = static_cast<double>(alpha_bar_oracle(1000, t));
    CHECK(std::abs(s.alpha_bar(t) - oracle) / oracle < 1e-12);
  }
}

TEST_CASE("schedule table invariants") {
  const auto& s = standard();
  CHECK(s.alpha_bar(0) == 1.0);
  CHECK(s.alpha_bar(1000) > 0.0);
  CHECK(s.alpha_bar(1000) < 1.0);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == 0.02);
  for (int t = 1; t <= 1000; ++t) {
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
    CHECK(std::abs(s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)) <= 1e-15 * s.alpha_bar(t));
  }
  const auto again = NoiseSchedule::linear(1000, 1e-4, 0.02);
  CHECK(std::memcmp(again.alpha_bar_table().data(), s.alpha_bar_table().data(), 1001 * sizeof(double)) == 0);
}

TEST_CASE("diffuse_step closed-form examples") {
  const auto& s = standard();
  Rng rng(1);
  const Tensor x = rng.normal_tensor({3, 3});
  const Tensor zero({3, 3}, 0.0), one({3, 3}, 1.0);
  for (int t : {1, 37, 1000}) {
    const Tensor a = diffuse_step(s, x, t, zero);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(a[i] == std::sqrt(s.alpha(t)) * x[i]);
    const Tensor b = diffuse_step(s, zero, t, one);
    for (double v : b.data()) CHECK(v == std::sqrt(1.0 - s.alpha(t)));
  }
  expect_error(ErrorKind::StepOutOfRange, [&] { diffuse_step(s, x, 0, zero); });
  expect_error(ErrorKind::StepOutOfRange, [&] { diffuse_step(s, x, 1001, zero); });
}

TEST_CASE("iterated forward steps match the closed-form marginal") {
  const auto& s = standard();
  const int t = 250, trials = 10000;
  const Tensor x0({4}, std::vector<double>{1.0, -0.5, 0.25, 0.0});
  std::vector<double> sum(4, 0.0), sum_sq(4, 0.0);
  Rng rng(99);
  for (int n = 0; n < trials; ++n) {
    Tensor x = x0;
    for (int step = 1; step <= t; ++step) x = diffuse_step(s, x, step, rng.normal_tensor({4}));
    for (std::size_t i = 0; i < 4; ++i) {
      sum[i] += x[i];
      sum_sq[i] += x[i] * x[i];
    }
  }
  const double mean_coef = std::sqrt(s.alpha_bar(t)), var = 1.0 - s.alpha_bar(t);
  for (std::size_t i = 0; i < 4; ++i) {
    const double mean = sum[i] / trials;
    const double sample_var = (sum_sq[i] - trials * mean * mean) / (trials - 1);
    CHECK(std::abs(mean - mean_coef * x0[i]) < 4.0 * std::sqrt(var / trials));
    CHECK(std::abs(sample_var - var) < 4.0 * var * std::sqrt(2.0 / (trials - 1)));
  }
}

TEST_CASE("q_sample and predict_x0") {
  const auto& s = standard();
  Rng rng(5);
  const Tensor x0 = rng.normal_tensor({2, 5});
  const Tensor zero({2, 5}, 0.0);
  for (int t : {1, 500, 1000}) {
    const Tensor a = q_sample(s, x0, t, zero);
    for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(a[i] == std::sqrt(s.alpha_bar(t)) * x0[i]);
    const Tensor b = predict_x0(s, x0, t, zero);
    for (std::size_t i = 0; i < x0.numel(); ++i) CHECK(b[i] == doctest::Approx(x0[i] / std::sqrt(s.alpha_bar(t))));
  }
  // At t = T the signal coefficient is the product oracle's root.
  const Tensor unit({1}, 1.0);
  const double coef = q_sample(s, unit, 1000, Tensor({1}, 0.0))[0];
  const double oracle = static_cast<double>(sqrt(alpha_bar_oracle(1000, 1000)));
  CHECK(std::abs(coef - oracle) / oracle < 1e-12);
  expect_error(ErrorKind::StepOutOfRange, [&] { q_sample(s, x0, 0, zero); });
  expect_error(ErrorKind::StepOutOfRange, [&] { predict_x0(s, x0, 1001, zero); });
}

TEST_CASE("q_sample then predict_x0 round-trips over 1k random trials") {
  const auto& s = standard();
  Rng rng(17);
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int t = rng.uniform_int(1, 1000);
    const Tensor x0 = rng.normal_tensor({3, 4}), eps = rng.normal_tensor({3, 4});
    worst = std::max(worst, max_abs_diff(predict_x0(s, q_sample(s, x0, t, eps), t, eps), x0));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("ddpm_step") {
  const auto& s = standard();
  Rng rng(3);
  const Tensor xt = rng.normal_tensor({4, 4}), x0 = rng.normal_tensor({4, 4}), noise = rng.normal_tensor({4, 4});
  // t = 1: both the x_t and the noise coefficients vanish.
  const Tensor out = ddpm_step(s, xt, 1, x0, noise);
  CHECK(max_abs_diff(out, x0) < 1e-12);
  const Tensor zero({4, 4}, 0.0);
  const Tensor still = ddpm_step(s, zero, 300, zero, zero);
  for (double v : still.data()) CHECK(v == 0.0);

  for (int trial = 0; trial < 200; ++trial) {
    const int t = rng.uniform_int(1, 1000);
    const long double a = s.alpha(t), ab = s.alpha_bar(t), abp = s.alpha_bar(t - 1);
    const long double xt_coef = (1.0L - abp) / (1.0L - ab) * std::sqrt(a);
    const long double x0_coef = (1.0L - a) / (1.0L - ab) * std::sqrt(abp);
    const long double sigma = std::sqrt((1.0L - abp) * (1.0L - a) / (1.0L - ab));
    const auto c = posterior_coefficients(s, t);
    CHECK(std::abs(c.xt_coef - static_cast<double>(xt_coef)) <= 1e-12 * std::max(1e-300, double(xt_coef)));
    CHECK(std::abs(c.x0_coef - static_cast<double>(x0_coef)) <= 1e-12 * double(x0_coef));
    CHECK(std::abs(c.sigma - static_cast<double>(sigma)) <= 1e-12 * std::max(1e-300, double(sigma)));
  }
  expect_error(ErrorKind::StepOutOfRange, [&] { ddpm_step(s, xt, 0, x0, noise); });
}

TEST_CASE("ddim_step") {
  const auto& s = standard();
  Rng rng(8);
  const Tensor x0 = rng.normal_tensor({3, 3}), eps = rng.normal_tensor({3, 3});
  for (int trial = 0; trial < 100; ++trial) {
    const int t = rng.uniform_int(2, 1000), tp = rng.uniform_int(1, t - 1);
    const Tensor xt = q_sample(s, x0, t, eps);
    CHECK(max_abs_diff(ddim_step(s, xt, t, tp, eps), q_sample(s, x0, tp, eps)) < 1e-9);
    CHECK(max_abs_diff(ddim_step(s, xt, t, 0, eps), predict_x0(s, xt, t, eps)) < 1e-12);
  }
  expect_error(ErrorKind::StepOrderViolation, [&] { ddim_step(s, x0, 5, 5, eps); });
  expect_error(ErrorKind::StepOrderViolation, [&] { ddim_step(s, x0, 5, 7, eps); });
  expect_error(ErrorKind::StepOrderViolation, [&] { ddim_step(s, x0, 1001, 3, eps); });
  expect_error(ErrorKind::StepOrderViolation, [&] { ddim_step(s, x0, 5, -1, eps); });
}

TEST_CASE("50-step DDIM with exact noise recovers x0") {
  const auto& s = standard();
  Rng rng(12);
  const Tensor x0 = rng.normal_tensor({4, 4, 3}, 0.5);
  Tensor x = rng.normal_tensor({4, 4, 3});
  const auto ts = ddim_timesteps(1000, 50);
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const int t = ts[i];
    const double ab = s.alpha_bar(t);
    Tensor eps(x.shape());
    for (std::size_t j = 0; j < x.numel(); ++j) eps[j] = (x[j] - std::sqrt(ab) * x0[j]) / std::sqrt(1.0 - ab);
    x = ddim_step(s, x, t, ts[i + 1], eps);
  }
  CHECK(max_abs_diff(x, x0) < 1e-8);
}
