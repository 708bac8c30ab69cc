#pragma once

#include <cstdint>
#include <vector>

#include "kdiff/dataset.hpp"
#include "kdiff/metrics.hpp"
#include "kdiff/sampler.hpp"
#include "kdiff/trainer.hpp"

namespace kdiff {

struct EvalSettings {
  int eval_count = 2048;
  int ddim_steps = 50;
  double guidance = 2.1;
  std::size_t feature_dim = 64;
  std::uint64_t projection_seed = 0x5eed;
  /// Real images drawn for the reference statistics.
  int reference_count = 2048;
  std::uint64_t reference_seed = 0x7e7e;
  std::uint64_t prompt_seed = 0xb1d;
  std::uint64_t sample_seed = 0x5a3;
  /// Object count forced on prompts (0 keeps the corpus distribution).
  int prompt_objects = 0;
  SceneOptions scene;
};

/// Real-image reference plus the prompt set, fixed for one evaluation run.
class Evaluator {
 public:
  explicit Evaluator(EvalSettings settings);

  const EvalSettings& settings() const { return settings_; }
  const FeatureProjection& projection() const { return projection_; }
  const GaussianStats& reference() const { return reference_; }
  const std::vector<SceneSpec>& prompts() const { return prompts_; }
  double toy_fid(const std::vector<Tensor>& images) const;

 private:
  EvalSettings settings_;
  FeatureProjection projection_;
  GaussianStats reference_;
  std::vector<SceneSpec> prompts_;
};

/// One guided DDIM sample per prompt; sample i uses seed derive_seed(seed, i)
/// so the result does not depend on the thread count.
std::vector<Tensor> generate_images(const ExpertBank& bank, const Vocabulary& vocab, const NoiseSchedule& schedule,
                                    const std::vector<SceneSpec>& prompts, double guidance, int ddim_steps,
                                    std::uint64_t seed);

struct ParetoPoint {
  double scale = 0.0;
  double toy_fid = 0.0;
  double binding_accuracy = 0.0;
};

std::vector<ParetoPoint> pareto_sweep(const ExpertBank& bank, const Vocabulary& vocab, const NoiseSchedule& schedule,
                                      const Evaluator& evaluator, const std::vector<double>& scales);

struct TrainEvalResult {
  std::uint64_t seed = 0;
  double toy_fid = 0.0;
  double binding_accuracy = 0.0;
  double final_loss = 0.0;
};

/// Trains from scratch under `config` and scores the result at the
/// evaluator's guidance scale.
TrainEvalResult train_and_evaluate(const TrainConfig& config, const Vocabulary& vocab,
                                   const std::vector<TrainingExample>& data, const Evaluator& evaluator);

struct Summary {
  double mean = 0.0;
  /// Half-width of the two-sided 95% Student-t interval (0 for one value).
  double half_width = 0.0;
};
Summary summarize(const std::vector<double>& values);

}  // namespace kdiff
