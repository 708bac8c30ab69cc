#include "kdiff/evaluation.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>

#include "kdiff/error.hpp"

namespace kdiff {

namespace {

std::vector<SceneSpec> make_prompts(const EvalSettings& s) {
  if (s.eval_count < 2) fail(ErrorKind::ConfigError, "eval count must be at least 2");
  SceneOptions options = s.scene;
  if (s.prompt_objects > 0) options.min_objects = options.max_objects = s.prompt_objects;
  std::vector<SceneSpec> out;
  for (auto& sample : generate_dataset(static_cast<std::size_t>(s.eval_count), s.prompt_seed, options)) {
    out.push_back(std::move(sample.spec));
  }
  return out;
}

GaussianStats make_reference(const EvalSettings& s, const FeatureProjection& projection) {
  std::vector<Tensor> images;
  for (auto& sample : generate_dataset(static_cast<std::size_t>(s.reference_count), s.reference_seed, s.scene)) {
    images.push_back(std::move(sample.image));
  }
  return image_stats(images, projection);
}

}  // namespace

Evaluator::Evaluator(EvalSettings settings)
    : settings_(std::move(settings)),
      projection_(settings_.scene.height * settings_.scene.width * 3, settings_.feature_dim, settings_.projection_seed),
      reference_(make_reference(settings_, projection_)),
      prompts_(make_prompts(settings_)) {}

double Evaluator::toy_fid(const std::vector<Tensor>& images) const {
  return frechet_gaussian_distance(image_stats(images, projection_), reference_);
}

std::vector<Tensor> generate_images(const ExpertBank& bank, const Vocabulary& vocab, const NoiseSchedule& schedule,
                                    const std::vector<SceneSpec>& prompts, double guidance, int ddim_steps,
                                    std::uint64_t seed) {
  std::vector<Tensor> images(prompts.size());
  const auto n = static_cast<long>(prompts.size());
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const BankPredictor predictor(bank, tokenize_plain(vocab, prompt_words(prompts[i])).tokens);
    SampleOptions options;
    options.guidance = guidance;
    options.seed = derive_seed(seed, static_cast<std::uint64_t>(i));
    images[i] = sample_ddim(predictor, schedule, ddim_steps, options).image;
  }
  return images;
}

std::vector<ParetoPoint> pareto_sweep(const ExpertBank& bank, const Vocabulary& vocab, const NoiseSchedule& schedule,
                                      const Evaluator& evaluator, const std::vector<double>& scales) {
  if (scales.empty()) fail(ErrorKind::ConfigError, "pareto sweep needs at least one scale");
  std::vector<ParetoPoint> out;
  for (double s : scales) {
    if (!std::isfinite(s)) fail(ErrorKind::ConfigError, "guidance scale must be finite");
    const auto images = generate_images(bank, vocab, schedule, evaluator.prompts(), s, evaluator.settings().ddim_steps,
                                        evaluator.settings().sample_seed);
    out.push_back({s, evaluator.toy_fid(images), binding_accuracy(images, evaluator.prompts())});
  }
  return out;
}

TrainEvalResult train_and_evaluate(const TrainConfig& config, const Vocabulary& vocab,
                                   const std::vector<TrainingExample>& data, const Evaluator& evaluator) {
  Trainer trainer(config, vocab, data);
  trainer.run();
  const auto& st = evaluator.settings();
  const auto images = generate_images(trainer.state().bank, vocab, trainer.schedule(), evaluator.prompts(),
                                      st.guidance, st.ddim_steps, st.sample_seed);
  TrainEvalResult r;
  r.seed = config.seed;
  r.toy_fid = evaluator.toy_fid(images);
  r.binding_accuracy = binding_accuracy(images, evaluator.prompts());
  r.final_loss = trainer.loss_history().empty() ? 0.0 : trainer.loss_history().back();
  return r;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() < 2) return s;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double n = static_cast<double>(values.size());
  const double sd = std::sqrt(ss / (n - 1.0));
  const boost::math::students_t dist(n - 1.0);
  s.half_width = boost::math::quantile(boost::math::complement(dist, 0.025)) * sd / std::sqrt(n);
  return s;
}

}  // namespace kdiff
