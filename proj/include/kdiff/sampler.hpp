#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kdiff/conditioning.hpp"
#include "kdiff/denoiser.hpp"
#include "kdiff/mode.hpp"
#include "kdiff/schedule.hpp"

namespace kdiff {

/// Source of noise estimates for the samplers.
class NoisePredictor {
 public:
  virtual ~NoisePredictor() = default;
  virtual Shape image_shape() const = 0;
  /// Whether a conditional branch exists; without one, guidance is skipped
  /// and only the unconditional estimate is evaluated.
  virtual bool has_condition() const = 0;
  /// `conditional` selects the text-conditioned branch; `capture`, when
  /// given, receives the branch's attention maps.
  virtual Tensor predict(const Tensor& xt, int t, bool conditional, AttentionCapture* capture) const = 0;
};

/// Routes every step to its owning expert and counts invocations per
/// expert and branch. Text features are encoded once at construction.
class BankPredictor final : public NoisePredictor {
 public:
  /// An empty token list means unconditional generation.
  BankPredictor(const ExpertBank& bank, std::vector<int> tokens);

  Shape image_shape() const override { return bank_->denoiser.image_shape(); }
  bool has_condition() const override { return text_.has_value(); }
  Tensor predict(const Tensor& xt, int t, bool conditional, AttentionCapture* capture) const override;

  /// Calls per expert, split by branch.
  const std::vector<std::size_t>& conditional_calls() const { return cond_calls_; }
  const std::vector<std::size_t>& unconditional_calls() const { return uncond_calls_; }

 private:
  const ExpertBank* bank_;
  std::optional<Tensor> text_;
  mutable std::vector<std::size_t> cond_calls_;
  mutable std::vector<std::size_t> uncond_calls_;
};

/// (1 - s) * eps_uncond + s * eps_cond, so that s = 0 and s = 1 reproduce
/// the inputs exactly.
Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double scale);

struct SampleOptions {
  double guidance = 2.1;
  std::uint64_t seed = 0;
  bool capture_attention = false;
  bool record_trajectory = false;
};

struct SampleTrajectory {
  std::uint64_t seed = 0;
  double guidance = 0.0;
  /// Visited steps followed by 0.
  std::vector<int> steps;
  /// x_t at each visited step (when recorded).
  std::vector<Tensor> states;
  /// x0 estimate at each visited step (when recorded).
  std::vector<Tensor> x0_predictions;
  /// Conditional-branch attention per visited step (when captured).
  std::vector<AttentionCapture> attention;
  Tensor image;
};

/// Ancestral sampling over every step T..1 with guidance. x_T and the
/// per-step noise come from one stream seeded with `seed`; no noise is added
/// at t = 1.
SampleTrajectory sample_ddpm(const NoisePredictor& predictor, const NoiseSchedule& schedule,
                             const SampleOptions& options);

/// Evenly spaced visited steps from T down to 1, then 0.
std::vector<int> ddim_timesteps(int schedule_steps, int steps);

/// Deterministic DDIM over `steps` evenly spaced timesteps; randomness only
/// in x_T.
SampleTrajectory sample_ddim(const NoisePredictor& predictor, const NoiseSchedule& schedule, int steps,
                             const SampleOptions& options);

/// Per visited step: for each image token, the mean attention mass it puts
/// on text columns, averaged over blocks and laid out on the patch grid.
std::vector<Tensor> capture_attention(const SampleTrajectory& trajectory, std::size_t grid_h, std::size_t grid_w);

/// Shannon entropy (nats) of a nonnegative map normalized to sum to one.
double spatial_entropy(const Tensor& map);

}  // namespace kdiff
