#include "kdiff/toy.hpp"

#include "kdiff/dataset.hpp"

namespace kdiff {

ToyProblem toy_problem(std::uint64_t seed) {
  ToyProblem toy{TrainConfig{}, Vocabulary::standard(), {}};
  TrainConfig& c = toy.config;
  c.schedule_steps = 10;
  c.denoiser.height = c.denoiser.width = 4;
  c.denoiser.patch = 2;
  c.denoiser.d_model = 8;
  c.denoiser.d_text = 8;
  c.denoiser.layers = 1;
  c.denoiser.ffn_mult = 2;
  c.denoiser.schedule_steps = c.schedule_steps;
  // Larger than the training default so gradients sit well above the
  // relative-error floor.
  c.denoiser.init_std = 0.3;
  c.text.vocab_size = toy.vocab.size();
  c.text.d_text = 8;
  c.text.ffn_mult = 2;
  c.text.init_std = 0.3;
  c.experts = 2;
  c.policy.p_know = 1.0;
  c.p_uncond = 0.0;
  c.batch_size = 2;
  c.train_steps = 1;
  c.seed = seed;

  SceneOptions scene;
  scene.height = scene.width = 4;
  scene.min_objects = 2;
  scene.max_objects = 2;
  toy.data = to_training_examples(generate_dataset(4, seed, scene));
  return toy;
}

GradCheckReport check_loss_gradients(const ToyProblem& toy, const GradCheckOptions& options, std::uint64_t draw_seed) {
  const TrainConfig& c = toy.config;
  const TrainState state = init_train_state(c);
  const NoiseSchedule schedule = NoiseSchedule::linear(c.schedule_steps, c.beta_start, c.beta_end);
  std::vector<const TrainingExample*> batch;
  std::vector<ItemDraw> draws;
  for (int i = 0; i < c.batch_size; ++i) {
    const TrainingExample& ex = toy.data[static_cast<std::size_t>(i) % toy.data.size()];
    batch.push_back(&ex);
    Rng rng(derive_seed(draw_seed, 0, static_cast<std::uint64_t>(i) + 1));
    draws.push_back(draw_item(c, toy.vocab, ex, rng));
  }
  // Route the two items to different experts so both sets are exercised.
  draws[0].t = 2;
  draws[1].t = c.schedule_steps;
  Graph g;
  BankBinding binding(g, state.bank, true);
  const LossTerms terms = training_loss(g, binding, state.bank, schedule, c, batch, draws);
  return finite_difference_check(g, terms.loss, options);
}

}  // namespace kdiff
