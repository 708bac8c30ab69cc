#include "kdiff/sampler.hpp"

#include <cmath>

#include "kdiff/error.hpp"
#include "kdiff/text_encoder.hpp"

namespace kdiff {

BankPredictor::BankPredictor(const ExpertBank& bank, std::vector<int> tokens)
    : bank_(&bank), cond_calls_(bank.experts.size(), 0), uncond_calls_(bank.experts.size(), 0) {
  if (!tokens.empty()) text_ = encode_text(bank.text, bank.text_encoder, tokens);
}

Tensor BankPredictor::predict(const Tensor& xt, int t, bool conditional, AttentionCapture* capture) const {
  if (conditional && !text_) fail(ErrorKind::ShapeMismatch, "conditional branch without text");
  const int e = bank_->route(t);
  (conditional ? cond_calls_ : uncond_calls_)[e]++;
  NoisePrediction p = predict_noise(bank_->denoiser, bank_->experts[e], xt, t, conditional ? &*text_ : nullptr,
                                    nullptr, capture != nullptr);
  if (capture) *capture = std::move(*p.attention);
  return std::move(p.eps);
}

Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double scale) {
  if (eps_cond.shape() != eps_uncond.shape()) {
    fail(ErrorKind::ShapeMismatch, shape_string(eps_cond.shape()) + " vs " + shape_string(eps_uncond.shape()));
  }
  Tensor out(eps_cond.shape());
  const double keep = 1.0 - scale;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = keep * eps_uncond[i] + scale * eps_cond[i];
  return out;
}

namespace {

Tensor guided_noise(const NoisePredictor& predictor, const Tensor& xt, int t, const SampleOptions& options,
                    SampleTrajectory& traj) {
  AttentionCapture capture;
  AttentionCapture* cap = options.capture_attention ? &capture : nullptr;
  Tensor eps;
  if (predictor.has_condition()) {
    const Tensor cond = predictor.predict(xt, t, true, cap);
    const Tensor uncond = predictor.predict(xt, t, false, nullptr);
    eps = cfg_combine(cond, uncond, options.guidance);
  } else {
    eps = predictor.predict(xt, t, false, cap);
  }
  if (options.capture_attention) traj.attention.push_back(std::move(capture));
  return eps;
}

}  // namespace

SampleTrajectory sample_ddpm(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                             const SampleOptions& options) {
  SampleTrajectory traj;
  traj.seed = options.seed;
  traj.guidance = options.guidance;
  Rng rng(options.seed);
  Tensor x = rng.normal_tensor(predictor.image_shape());
  for (int t = schedule.steps(); t >= 1; --t) {
    traj.steps.push_back(t);
    const Tensor eps = guided_noise(predictor, x, t, options, traj);
    const Tensor x0 = predict_x0(schedule, x, t, eps);
    Tensor noise(x.shape(), 0.0);
    if (t > 1) noise = rng.normal_tensor(x.shape());
    if (options.record_trajectory) {
      traj.states.push_back(x);
      traj.x0_predictions.push_back(x0);
    }
    x = ddpm_step(schedule, x, t, x0, noise);
  }
  traj.steps.push_back(0);
  traj.image = std::move(x);
  return traj;
}

std::vector<int> ddim_timesteps(int schedule_steps, int steps) {
  if (steps < 1) fail(ErrorKind::ConfigError, "DDIM needs at least one step");
  if (steps > schedule_steps) {
    fail(ErrorKind::StepsExceedT, std::to_string(steps) + " steps for a " + std::to_string(schedule_steps) +
                                      "-step schedule");
  }
  std::vector<int> out;
  if (steps == 1) {
    out.push_back(schedule_steps);
  } else {
    for (int i = 0; i < steps; ++i) {
      const double pos = static_cast<double>(schedule_steps) -
                         static_cast<double>(i) * static_cast<double>(schedule_steps - 1) / (steps - 1);
      out.push_back(static_cast<int>(std::lround(pos)));
    }
  }
  out.push_back(0);
  return out;
}

SampleTrajectory sample_ddim(const NoisePredictor& predictor, const NoiseSchedule& schedule, int steps,
                             const SampleOptions& options) {
  const auto ts = ddim_timesteps(schedule.steps(), steps);
  SampleTrajectory traj;
  traj.seed = options.seed;
  traj.guidance = options.guidance;
  traj.steps = ts;
  Rng rng(options.seed);
  Tensor x = rng.normal_tensor(predictor.image_shape());
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    const int t = ts[i];
    const Tensor eps = guided_noise(predictor, x, t, options, traj);
    if (options.record_trajectory) {
      traj.states.push_back(x);
      traj.x0_predictions.push_back(predict_x0(schedule, x, t, eps));
    }
    x = ddim_step(schedule, x, t, ts[i + 1], eps);
  }
  traj.image = std::move(x);
  return traj;
}

std::vector<Tensor> capture_attention(const SampleTrajectory& trajectory, std::size_t grid_h, std::size_t grid_w) {
  if (trajectory.attention.empty()) fail(ErrorKind::CaptureDisabled, "trajectory has no attention capture");
  std::vector<Tensor> maps;
  for (const auto& blocks : trajectory.attention) {
    if (blocks.empty()) fail(ErrorKind::CaptureDisabled, "empty capture");
    const std::size_t n_x = grid_h * grid_w;
    Tensor map({grid_h, grid_w}, 0.0);
    for (const Tensor& a : blocks) {
      if (a.dim(0) != n_x) fail(ErrorKind::ShapeMismatch, "attention rows do not match the patch grid");
      const std::size_t cols = a.dim(1);
      const std::size_t n_y = cols - n_x;
      if (n_y == 0) fail(ErrorKind::CaptureDisabled, "attention has no text columns");
      for (std::size_t i = 0; i < n_x; ++i) {
        double s = 0.0;
        for (std::size_t j = n_x; j < cols; ++j) s += a.at(i, j);
        map[i] += s / static_cast<double>(n_y);
      }
    }
    for (auto& v : map.data()) v /= static_cast<double>(blocks.size());
    maps.push_back(std::move(map));
  }
  return maps;
}

double spatial_entropy(const Tensor& map) {
  double total = 0.0;
  for (double v : map.data()) total += v;
  if (!(total > 0.0)) return 0.0;
  double h = 0.0;
  for (double v : map.data()) {
    const double p = v / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h;
}

}  // namespace kdiff
