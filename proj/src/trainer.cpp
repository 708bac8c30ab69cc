#include "kdiff/trainer.hpp"

#include <algorithm>
#include <numeric>

#include "kdiff/checkpoint.hpp"
#include "kdiff/error.hpp"

namespace kdiff {

void TrainConfig::validate() const {
  auto prob = [](double p, const char* name) {
    if (!(p >= 0.0 && p <= 1.0)) fail(ErrorKind::ConfigError, std::string(name) + " must be in [0, 1]");
  };
  prob(policy.p_know, "p_know");
  prob(policy.p_cap, "p_cap");
  prob(p_uncond, "p_uncond");
  if (!(w_a >= 0.0) || !(w_l >= 0.0)) fail(ErrorKind::ConfigError, "w_a and w_l must be >= 0");
  if (!(adam.lr > 0.0) || !(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0) ||
      !(adam.eps > 0.0) || !(adam.weight_decay >= 0.0)) {
    fail(ErrorKind::ConfigError, "invalid optimizer settings");
  }
  if (batch_size < 1 || warmup_steps < 0 || train_steps < 0 || experts < 1 || log_every < 1 ||
      checkpoint_every < 0) {
    fail(ErrorKind::ConfigError, "batch, step counts and expert count must be positive");
  }
  if (experts > schedule_steps) fail(ErrorKind::ConfigError, "more experts than timesteps");
  if (denoiser.schedule_steps != schedule_steps || denoiser.d_text != text.d_text) {
    fail(ErrorKind::ConfigError, "denoiser and schedule/text settings disagree");
  }
  denoiser.validate();
}

ItemDraw draw_item(const TrainConfig& config, const Vocabulary& vocab, const TrainingExample& example, Rng& rng) {
  ItemDraw d;
  d.t = rng.uniform_int(1, config.schedule_steps);
  d.eps = rng.normal_tensor(example.image.shape());
  d.drop_text = rng.bernoulli(config.p_uncond);
  if (!config.conditional) d.drop_text = true;
  d.conditioning = augment_sample(vocab, example.caption, config.policy, rng);
  if (d.conditioning.tokens.empty()) d.drop_text = true;
  return d;
}

BankBinding::BankBinding(Graph& graph, const ExpertBank& bank, bool trainable)
    : graph_(&graph), bank_(&bank), trainable_(trainable), experts_(bank.experts.size()) {}

const BoundParams& BankBinding::text() {
  if (!text_) text_.emplace(*graph_, bank_->text_encoder, trainable_, "text/");
  return *text_;
}

const BoundParams& BankBinding::expert(int index) {
  auto& slot = experts_.at(index);
  if (!slot) slot.emplace(*graph_, bank_->experts[index], trainable_, "expert" + std::to_string(index) + "/");
  return *slot;
}

Var noise_loss(Graph& g, Var eps, Var eps_hat, const std::optional<Var>& weight) {
  Var sq = g.square(g.sub(eps, eps_hat));
  if (weight) sq = g.mul(sq, *weight);
  return g.mean(sq);
}

namespace {

Tensor expand_to_channels(const Tensor& map, std::size_t channels) {
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor out({h, w, channels});
  for (std::size_t i = 0; i < h * w; ++i) {
    for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = map[i];
  }
  return out;
}

}  // namespace

LossTerms training_loss(Graph& g, BankBinding& binding, const ExpertBank& bank, const NoiseSchedule& schedule,
                        const TrainConfig& config, const std::vector<const TrainingExample*>& batch,
                        const std::vector<ItemDraw>& draws) {
  if (batch.empty()) fail(ErrorKind::EmptyBatch, "training_loss on an empty batch");
  if (draws.size() != batch.size()) fail(ErrorKind::ShapeMismatch, "one draw per batch item required");
  const DenoiserConfig& dc = bank.denoiser;

  LossTerms terms;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const TrainingExample& ex = *batch[i];
    const ItemDraw& d = draws[i];
    const Tensor xt = q_sample(schedule, ex.image, d.t, d.eps);
    Var x_tokens = g.constant(patchify(xt, dc.patch), "xt");

    std::optional<Var> text;
    std::optional<AttentionScale> scale;
    if (!d.drop_text) {
      text = encode_text(g, bank.text, binding.text(), d.conditioning.tokens);
      // Attention strengthening is only defined when keyword columns exist.
      if (d.conditioning.scale_attention) {
        scale = build_attention_scale(dc.image_tokens(), d.conditioning.keyword_flags, config.w_a, true);
      }
    }
    const int e = bank.route(d.t);
    Var eps_hat = predict_noise(g, dc, binding.expert(e), x_tokens, d.t, text, scale ? &*scale : nullptr);

    std::optional<Var> weight;
    if (d.conditioning.weight_loss) {
      const LossWeightMap wl = build_loss_weight(d.conditioning.region_masks, config.w_l, dc.height, dc.width);
      weight = g.constant(patchify(expand_to_channels(wl.weights, dc.channels), dc.patch), "W_l");
    }
    Var eps_tokens = g.constant(patchify(d.eps, dc.patch), "eps");
    terms.item_losses.push_back(noise_loss(g, eps_tokens, eps_hat, weight));
    terms.expert_of_item.push_back(e);
  }

  std::vector<Var> ordered = terms.item_losses;
  std::stable_sort(ordered.begin(), ordered.end(),
                   [&](Var a, Var b) { return g.value(a).item() < g.value(b).item(); });
  terms.loss = g.mean(g.concat(ordered, 0));
  return terms;
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  Rng rng(derive_seed(config.seed, 0x1417));
  const int initial = config.warmup_steps > 0 ? 1 : config.experts;
  s.bank = init_bank(config.denoiser, config.text, initial, rng);
  s.text_optimizer = make_optimizer_state(s.bank.text_encoder);
  for (const auto& e : s.bank.experts) s.expert_optimizers.push_back(make_optimizer_state(e));
  return s;
}

Trainer::Trainer(TrainConfig config, Vocabulary vocab, const std::vector<TrainingExample>& data)
    : Trainer(config, std::move(vocab), data, init_train_state(config)) {}

Trainer::Trainer(TrainConfig config, Vocabulary vocab, const std::vector<TrainingExample>& data, TrainState resume)
    : config_(std::move(config)),
      vocab_(std::move(vocab)),
      data_(&data),
      schedule_(NoiseSchedule::linear(config_.schedule_steps, config_.beta_start, config_.beta_end)),
      state_(std::move(resume)) {
  config_.validate();
  if (data.empty()) fail(ErrorKind::DataError, "training set is empty");
  for (const auto& ex : data) {
    if (ex.image.shape() != config_.denoiser.image_shape()) {
      fail(ErrorKind::DataError, "example image " + shape_string(ex.image.shape()) + " does not match model " +
                                     shape_string(config_.denoiser.image_shape()));
    }
  }
  if (config_.text.vocab_size != vocab_.size()) {
    fail(ErrorKind::ConfigError, "text encoder vocabulary does not match the vocabulary");
  }
}

void Trainer::maybe_split() {
  if (state_.bank.size() == 1 && config_.experts > 1 && config_.warmup_steps > 0 &&
      state_.step >= config_.warmup_steps) {
    state_.bank = expand_bank(state_.bank, config_.experts);
    state_.expert_optimizers.assign(config_.experts, state_.expert_optimizers.front());
  }
}

StepMetrics Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  maybe_split();
  const auto& data = *data_;
  const auto step_index = static_cast<std::uint64_t>(state_.step);

  std::vector<const TrainingExample*> batch;
  std::vector<ItemDraw> draws;
  Rng pick(derive_seed(config_.seed, step_index, 0));
  for (int i = 0; i < config_.batch_size; ++i) {
    batch.push_back(&data[pick.uniform_int(0, static_cast<int>(data.size()) - 1)]);
  }
  for (int i = 0; i < config_.batch_size; ++i) {
    Rng item_rng(derive_seed(config_.seed, step_index, static_cast<std::uint64_t>(i) + 1));
    draws.push_back(draw_item(config_, vocab_, *batch[i], item_rng));
  }

  Graph g;
  BankBinding binding(g, state_.bank, true);
  const LossTerms terms = training_loss(g, binding, state_.bank, schedule_, config_, batch, draws);
  const GradientMap grads = g.backward(terms.loss);

  auto collect = [&](const BoundParams& bound) {
    std::vector<Tensor> out;
    for (const auto& [_, var] : bound.vars()) out.push_back(grads.at(var));
    return out;
  };
  if (binding.text_bound()) {
    adamw_step(state_.bank.text_encoder, collect(binding.text()), state_.text_optimizer, config_.adam);
  }
  for (int e = 0; e < state_.bank.size(); ++e) {
    if (!binding.expert_bound(e)) continue;
    adamw_step(state_.bank.experts[e], collect(binding.expert(e)), state_.expert_optimizers[e], config_.adam);
  }

  StepMetrics m;
  m.step = ++state_.step;
  m.loss = g.value(terms.loss).item();
  m.expert_histogram.assign(state_.bank.size(), 0);
  for (int e : terms.expert_of_item) ++m.expert_histogram[e];
  m.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  losses_.push_back(m.loss);
  return m;
}

void Trainer::run(const std::function<void(const StepMetrics&)>& on_log) {
  while (!done()) {
    const StepMetrics m = step();
    if (on_log && (m.step % config_.log_every == 0 || done())) on_log(m);
    if (config_.checkpoint_every > 0 && (m.step % config_.checkpoint_every == 0 || done()) &&
        !config_.checkpoint_dir.empty()) {
      save_checkpoint(config_.checkpoint_dir / ("step-" + std::to_string(m.step) + ".ckpt"), state_, config_);
    }
  }
  maybe_split();
}

}  // namespace kdiff
