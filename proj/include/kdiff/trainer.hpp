#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "kdiff/adamw.hpp"
#include "kdiff/conditioning.hpp"
#include "kdiff/mode.hpp"
#include "kdiff/schedule.hpp"

namespace kdiff {

struct TrainingExample {
  Tensor image;  // [h, w, c] in [-1, 1]
  AnnotatedCaption caption;
};

struct TrainConfig {
  int schedule_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  DenoiserConfig denoiser;
  TextEncoderConfig text;
  int experts = 10;
  double w_a = 0.01;
  double w_l = 0.1;
  AugmentPolicy policy;
  double p_uncond = 0.1;
  /// False trains a purely unconditional model (text is always dropped).
  bool conditional = true;
  AdamWConfig adam;
  int batch_size = 16;
  /// Single-network baseline steps before the bank is split into experts.
  std::int64_t warmup_steps = 0;
  std::int64_t train_steps = 1000;
  std::uint64_t seed = 0;
  std::int64_t log_every = 10;
  std::int64_t checkpoint_every = 0;
  std::filesystem::path checkpoint_dir;

  std::int64_t total_steps() const { return warmup_steps + train_steps; }
  void validate() const;
};

/// Randomness consumed by one batch item; drawn up front so the loss itself
/// is a deterministic function of parameters.
struct ItemDraw {
  int t = 1;
  Tensor eps;
  bool drop_text = false;
  ConditioningInput conditioning;
};

/// Draws t ~ U{1..T}, eps ~ N(0, I), the condition-dropout flag and the
/// knowledge augmentation for one example, in that order.
ItemDraw draw_item(const TrainConfig& config, const Vocabulary& vocab, const TrainingExample& example, Rng& rng);

/// Graph leaves for one bank. Experts are bound on first use so untouched
/// experts never enter the graph.
class BankBinding {
 public:
  BankBinding(Graph& graph, const ExpertBank& bank, bool trainable);
  const BoundParams& text();
  const BoundParams& expert(int index);
  bool expert_bound(int index) const { return experts_[index].has_value(); }
  bool text_bound() const { return text_.has_value(); }

 private:
  Graph* graph_;
  const ExpertBank* bank_;
  bool trainable_;
  std::optional<BoundParams> text_;
  std::vector<std::optional<BoundParams>> experts_;
};

/// Per-item weighted squared error mean(W (.) (eps - eps_hat)^2) in token
/// layout. `weight` may be null (all ones).
Var noise_loss(Graph& g, Var eps, Var eps_hat, const std::optional<Var>& weight);

struct LossTerms {
  Var loss;
  std::vector<Var> item_losses;
  std::vector<int> expert_of_item;
};

/// Batch-mean of the knowledge-weighted denoising loss. Item losses are
/// summed in ascending order of value, which makes the result independent
/// of item order.
LossTerms training_loss(Graph& g, BankBinding& binding, const ExpertBank& bank, const NoiseSchedule& schedule,
                        const TrainConfig& config, const std::vector<const TrainingExample*>& batch,
                        const std::vector<ItemDraw>& draws);

struct StepMetrics {
  std::int64_t step = 0;
  double loss = 0.0;
  std::vector<int> expert_histogram;
  double wall_ms = 0.0;
};

struct TrainState {
  ExpertBank bank;
  OptimizerState text_optimizer;
  std::vector<OptimizerState> expert_optimizers;
  std::int64_t step = 0;  // optimizer steps completed
};

/// Fresh state: the bank starts with one expert when a warm-up phase is
/// configured, otherwise with `config.experts` independently drawn experts.
TrainState init_train_state(const TrainConfig& config);

class Trainer {
 public:
  Trainer(TrainConfig config, Vocabulary vocab, const std::vector<TrainingExample>& data);
  Trainer(TrainConfig config, Vocabulary vocab, const std::vector<TrainingExample>& data, TrainState resume);

  /// One optimizer step; splits the bank into experts when the warm-up
  /// phase ends.
  StepMetrics step();
  /// Runs to config.total_steps(), calling `on_log` every log_every steps
  /// and writing checkpoints every checkpoint_every steps.
  void run(const std::function<void(const StepMetrics&)>& on_log = {});

  bool done() const { return state_.step >= config_.total_steps(); }
  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const TrainConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  const std::vector<double>& loss_history() const { return losses_; }

 private:
  void maybe_split();

  TrainConfig config_;
  Vocabulary vocab_;
  const std::vector<TrainingExample>* data_;
  NoiseSchedule schedule_;
  TrainState state_;
  std::vector<double> losses_;
};

}  // namespace kdiff
