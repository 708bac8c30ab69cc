#include "kdiff/cli.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "kdiff/checkpoint.hpp"
#include "kdiff/config.hpp"
#include "kdiff/dataset.hpp"
#include "kdiff/evaluation.hpp"
#include "kdiff/image_io.hpp"
#include "kdiff/sampler.hpp"
#include "kdiff/toy.hpp"

namespace kdiff {

namespace fs = std::filesystem;
using nlohmann::json;

const char* error_class(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ConfigError:
    case ErrorKind::InvalidRange:
    case ErrorKind::NegativeScale:
    case ErrorKind::IndivisibleShape:
    case ErrorKind::InvalidExpertCount:
    case ErrorKind::StepsExceedT:
    case ErrorKind::UnknownWord:
    case ErrorKind::TagMismatch:
    case ErrorKind::VocabularyOverflow:
      return "ConfigError";
    case ErrorKind::DataError:
    case ErrorKind::IoError:
    case ErrorKind::AlignmentMismatch:
    case ErrorKind::EmptyBatch:
      return "DataError";
    case ErrorKind::BadMagic:
    case ErrorKind::VersionUnsupported:
    case ErrorKind::TruncatedFile:
    case ErrorKind::ChecksumMismatch:
      return "CheckpointError";
    default:
      return "InternalNumericError";
  }
}

int exit_code(ErrorKind kind) {
  const std::string_view c = error_class(kind);
  if (c == "ConfigError") return kExitConfig;
  if (c == "DataError") return kExitData;
  if (c == "CheckpointError") return kExitCheckpoint;
  return kExitNumeric;
}

namespace {

const char* const kCommands[] = {"gen-data", "train", "sample", "eval", "sweep", "inspect-attn", "check-grad"};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  out.flush();
  if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
}

std::string json_line(const json& j) { return j.dump() + "\n"; }

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::vector<double> parse_scales(const std::string& text) {
  Config scratch = Config::defaults();
  scratch.set("sweep.scales", text);
  return scratch.get_doubles("sweep.scales");
}

/// Everything resolved before any output is written.
struct Context {
  const Invocation& inv;
  Config config;
  std::uint64_t seed = 0;
  std::ostream& log;
  fs::path dir;
};

fs::path make_run_dir(const fs::path& root, const std::string& command, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) fail(ErrorKind::IoError, "cannot create output root " + root.string());
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << std::put_time(&tm, "%Y%m%dT%H%M%SZ");
  const std::string base = command + "-" + stamp.str() + "-" + std::to_string(seed);
  // create_directory reports false for an existing path, so a completed run
  // is never reused.
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const fs::path dir = root / (attempt == 0 ? base : base + "." + std::to_string(attempt));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec) fail(ErrorKind::IoError, "cannot create run directory " + dir.string());
  }
  fail(ErrorKind::IoError, "no free run directory name for " + base);
}

void open_run(Context& ctx, fs::path* run_dir) {
  ctx.dir = make_run_dir(ctx.inv.out, ctx.inv.command, ctx.seed);
  if (run_dir) *run_dir = ctx.dir;
  write_text(ctx.dir / "config.resolved", ctx.config.dump());
  ctx.log << "run directory: " << ctx.dir.string() << "\n";
}

Vocabulary load_vocabulary(const Config& c, const std::optional<fs::path>& near) {
  if (const std::string p = c.get_string("text.vocab"); !p.empty()) return Vocabulary::load(p);
  if (near) {
    fs::path dir = near->parent_path();
    for (int up = 0; up < 3 && !dir.empty(); ++up, dir = dir.parent_path()) {
      if (fs::exists(dir / "vocab.txt")) return Vocabulary::load(dir / "vocab.txt");
    }
  }
  return Vocabulary::standard();
}

struct Corpus {
  std::vector<TrainingExample> examples;
  Vocabulary vocab;
};

Corpus load_corpus(const Config& c) {
  const SceneOptions scene = scene_options(c);
  std::vector<SceneSample> samples;
  const std::string dir = c.get_string("data.dir");
  if (!dir.empty()) {
    samples = load_dataset(dir);
  } else {
    const auto count = c.get_int("data.count");
    if (count < 1) fail(ErrorKind::ConfigError, "data.count must be positive");
    samples = generate_dataset(static_cast<std::size_t>(count), static_cast<std::uint64_t>(c.get_int("data.seed")),
                               scene);
  }
  for (const auto& s : samples) {
    if (s.image.shape() != Shape{scene.height, scene.width, 3}) {
      fail(ErrorKind::DataError, "dataset image " + shape_string(s.image.shape()) +
                                     " does not match data.height x data.width");
    }
  }
  Corpus corpus{to_training_examples(samples), Vocabulary::standard()};
  if (!c.get_string("text.vocab").empty()) {
    corpus.vocab = Vocabulary::load(c.get_string("text.vocab"));
  } else if (!dir.empty() && fs::exists(fs::path(dir) / "vocab.txt")) {
    corpus.vocab = Vocabulary::load(fs::path(dir) / "vocab.txt");
  }
  return corpus;
}

LoadedCheckpoint require_checkpoint(const Context& ctx) {
  if (!ctx.inv.checkpoint) fail(ErrorKind::ConfigError, ctx.inv.command + " needs --checkpoint");
  if (!fs::exists(*ctx.inv.checkpoint)) fail(ErrorKind::ConfigError, "no checkpoint at " + ctx.inv.checkpoint->string());
  return load_checkpoint(*ctx.inv.checkpoint);
}

void check_vocab(const Vocabulary& vocab, const TrainConfig& config) {
  if (vocab.size() != config.text.vocab_size) {
    fail(ErrorKind::ConfigError, "vocabulary has " + std::to_string(vocab.size()) + " tokens, checkpoint expects " +
                                     std::to_string(config.text.vocab_size) + "; set text.vocab");
  }
}

StorageMode storage_mode(const Config& c) {
  const std::string s = c.get_string("train.storage");
  if (s == "f64") return StorageMode::Float64;
  if (s == "f32") return StorageMode::Float32;
  fail(ErrorKind::ConfigError, "train.storage must be f64 or f32");
}

json metrics_record(const StepMetrics& m) {
  return {{"step", m.step}, {"loss", m.loss}, {"expert_histogram", m.expert_histogram}, {"wall_ms", m.wall_ms}};
}

// -- commands ---------------------------------------------------------------

int cmd_gen_data(Context& ctx, fs::path* run_dir) {
  if (ctx.inv.seed) ctx.config.set("data.seed", std::to_string(*ctx.inv.seed));
  if (ctx.inv.count) ctx.config.set("data.count", std::to_string(*ctx.inv.count));
  const auto count = ctx.config.get_int("data.count");
  if (count < 1) fail(ErrorKind::ConfigError, "data.count must be positive");
  const SceneOptions scene = scene_options(ctx.config);
  ctx.seed = static_cast<std::uint64_t>(ctx.config.get_int("data.seed"));
  const auto samples = generate_dataset(static_cast<std::size_t>(count), ctx.seed, scene);
  open_run(ctx, run_dir);
  save_dataset(ctx.dir, samples, scene);
  Vocabulary::standard().save(ctx.dir / "vocab.txt");
  ctx.log << "wrote " << samples.size() << " scenes\n";
  return 0;
}

int cmd_train(Context& ctx, fs::path* run_dir) {
  Corpus corpus = load_corpus(ctx.config);
  TrainConfig config = train_config(ctx.config, corpus.vocab.size());
  std::optional<TrainState> resume;
  if (ctx.inv.checkpoint) {
    LoadedCheckpoint loaded = load_checkpoint(*ctx.inv.checkpoint);
    // The checkpoint fixes the model and the randomness; only the budget and
    // logging cadence come from the current config.
    TrainConfig resumed = loaded.config;
    resumed.train_steps = config.train_steps;
    resumed.log_every = config.log_every;
    resumed.checkpoint_every = config.checkpoint_every;
    config = resumed;
    check_vocab(corpus.vocab, config);
    resume = std::move(loaded.state);
  }
  const StorageMode storage = storage_mode(ctx.config);
  ctx.seed = config.seed;
  open_run(ctx, run_dir);
  config.checkpoint_dir = ctx.dir / "checkpoints";
  if (config.checkpoint_every > 0) fs::create_directories(config.checkpoint_dir);
  corpus.vocab.save(ctx.dir / "vocab.txt");

  Trainer trainer = resume ? Trainer(config, corpus.vocab, corpus.examples, std::move(*resume))
                           : Trainer(config, corpus.vocab, corpus.examples);
  std::ofstream metrics(ctx.dir / "metrics.jsonl", std::ios::binary);
  trainer.run([&](const StepMetrics& m) {
    metrics << json_line(metrics_record(m)) << std::flush;
    ctx.log << "step " << m.step << " loss " << m.loss << "\n";
  });
  const fs::path final_path = ctx.dir / "final.ckpt";
  save_checkpoint(final_path, trainer.state(), trainer.config(), storage);
  const auto& losses = trainer.loss_history();
  const json summary = {{"steps", trainer.state().step},
                        {"final_loss", losses.empty() ? 0.0 : losses.back()},
                        {"checkpoint", "final.ckpt"},
                        {"checkpoint_hash", checkpoint_hash(final_path)},
                        {"seed", config.seed}};
  write_text(ctx.dir / "summary.json", summary.dump(2) + "\n");
  ctx.log << "checkpoint: " << final_path.string() << "\n";
  return 0;
}

int cmd_sample(Context& ctx, fs::path* run_dir) {
  if (ctx.inv.steps) ctx.config.set("sample.steps", std::to_string(*ctx.inv.steps));
  if (ctx.inv.count) ctx.config.set("sample.count", std::to_string(*ctx.inv.count));
  if (ctx.inv.scales) {
    const auto scales = parse_scales(*ctx.inv.scales);
    std::ostringstream s;
    s << std::setprecision(17) << scales.front();
    ctx.config.set("sample.guidance", s.str());
  }
  const auto count = ctx.config.get_int("sample.count");
  const auto steps = ctx.config.get_int("sample.steps");
  if (count < 1) fail(ErrorKind::ConfigError, "sample.count must be positive");
  const std::string sampler = ctx.config.get_string("sample.sampler");
  if (sampler != "ddim" && sampler != "ddpm") fail(ErrorKind::ConfigError, "sample.sampler must be ddim or ddpm");
  if (steps < 1) fail(ErrorKind::ConfigError, "sample.steps must be positive");

  const LoadedCheckpoint ckpt = require_checkpoint(ctx);
  if (sampler == "ddim") ddim_timesteps(ckpt.config.schedule_steps, static_cast<int>(steps));
  const Vocabulary vocab = load_vocabulary(ctx.config, ctx.inv.checkpoint);
  check_vocab(vocab, ckpt.config);
  const auto words = split_words(ctx.config.get_string("sample.prompt"));
  const std::vector<int> tokens = ckpt.config.conditional ? tokenize_plain(vocab, words).tokens : std::vector<int>{};
  const double guidance = ctx.config.get_double("sample.guidance");
  const bool capture = ctx.config.get_bool("sample.capture");
  if (capture && tokens.empty()) fail(ErrorKind::CaptureDisabled, "attention capture needs a text prompt");
  const std::string hash = checkpoint_hash(*ctx.inv.checkpoint);
  const NoiseSchedule schedule =
      NoiseSchedule::linear(ckpt.config.schedule_steps, ckpt.config.beta_start, ckpt.config.beta_end);

  open_run(ctx, run_dir);
  const auto n = static_cast<long>(count);
  std::vector<SampleTrajectory> trajs(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (long i = 0; i < n; ++i) {
    const BankPredictor predictor(ckpt.state.bank, tokens);
    SampleOptions o;
    o.guidance = guidance;
    o.seed = derive_seed(ctx.seed, static_cast<std::uint64_t>(i));
    o.capture_attention = capture;
    trajs[i] = sampler == "ddim" ? sample_ddim(predictor, schedule, static_cast<int>(steps), o)
                                 : sample_ddpm(predictor, schedule, o);
  }
  const auto& dcfg = ckpt.state.bank.denoiser;
  for (long i = 0; i < n; ++i) {
    std::ostringstream name;
    name << "sample-" << std::setw(4) << std::setfill('0') << i;
    write_ppm(ctx.dir / (name.str() + ".ppm"), trajs[i].image);
    const json sidecar = {{"seed", trajs[i].seed},
                          {"base_seed", ctx.seed},
                          {"index", i},
                          {"guidance", guidance},
                          {"sampler", sampler},
                          {"steps", trajs[i].steps},
                          {"prompt", words},
                          {"checkpoint_hash", hash}};
    write_text(ctx.dir / (name.str() + ".json"), sidecar.dump(2) + "\n");
    if (capture) {
      const fs::path adir = ctx.dir / (name.str() + "-attn");
      fs::create_directories(adir);
      const auto maps = capture_attention(trajs[i], dcfg.grid_h(), dcfg.grid_w());
      for (std::size_t k = 0; k < maps.size(); ++k) {
        std::ostringstream f;
        f << "step-" << std::setw(4) << std::setfill('0') << k << "-t" << trajs[i].steps[k] << ".csv";
        write_csv(adir / f.str(), maps[k]);
      }
    }
  }
  ctx.log << "wrote " << n << " samples\n";
  return 0;
}

Evaluator make_evaluator(Context& ctx) {
  EvalSettings s = eval_settings(ctx.config);
  s.sample_seed = ctx.seed;
  return Evaluator(s);
}

int cmd_eval(Context& ctx, fs::path* run_dir) {
  if (ctx.inv.count) ctx.config.set("eval.count", std::to_string(*ctx.inv.count));
  if (ctx.inv.steps) ctx.config.set("eval.steps", std::to_string(*ctx.inv.steps));
  if (ctx.inv.scales) {
    std::ostringstream s;
    s << std::setprecision(17) << parse_scales(*ctx.inv.scales).front();
    ctx.config.set("eval.guidance", s.str());
  }
  eval_settings(ctx.config);
  const LoadedCheckpoint ckpt = require_checkpoint(ctx);
  const Vocabulary vocab = load_vocabulary(ctx.config, ctx.inv.checkpoint);
  check_vocab(vocab, ckpt.config);
  if (scene_options(ctx.config).height != ckpt.config.denoiser.height ||
      scene_options(ctx.config).width != ckpt.config.denoiser.width) {
    fail(ErrorKind::ConfigError, "data.height/data.width differ from the checkpoint's image size");
  }
  const std::string hash = checkpoint_hash(*ctx.inv.checkpoint);
  open_run(ctx, run_dir);
  const Evaluator evaluator = make_evaluator(ctx);
  const auto& st = evaluator.settings();
  const NoiseSchedule schedule =
      NoiseSchedule::linear(ckpt.config.schedule_steps, ckpt.config.beta_start, ckpt.config.beta_end);
  const auto points = pareto_sweep(ckpt.state.bank, vocab, schedule, evaluator, {st.guidance});
  const json record = {{"checkpoint_hash", hash},          {"guidance", st.guidance},
                       {"count", st.eval_count},           {"steps", st.ddim_steps},
                       {"toy_fid", points[0].toy_fid},     {"binding_accuracy", points[0].binding_accuracy},
                       {"seed", ctx.seed}};
  write_text(ctx.dir / "metrics.jsonl", json_line(record));
  ctx.log << "toy_fid " << points[0].toy_fid << " binding_accuracy " << points[0].binding_accuracy << "\n";
  return 0;
}

std::string csv_number(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

int sweep_guidance(Context& ctx, fs::path* run_dir) {
  const std::vector<double> scales =
      ctx.inv.scales ? parse_scales(*ctx.inv.scales) : ctx.config.get_doubles("sweep.scales");
  const LoadedCheckpoint ckpt = require_checkpoint(ctx);
  const Vocabulary vocab = load_vocabulary(ctx.config, ctx.inv.checkpoint);
  check_vocab(vocab, ckpt.config);
  const std::string hash = checkpoint_hash(*ctx.inv.checkpoint);
  open_run(ctx, run_dir);
  const Evaluator evaluator = make_evaluator(ctx);
  const NoiseSchedule schedule =
      NoiseSchedule::linear(ckpt.config.schedule_steps, ckpt.config.beta_start, ckpt.config.beta_end);
  const auto points = pareto_sweep(ckpt.state.bank, vocab, schedule, evaluator, scales);
  std::string csv = "scale,toy_fid,binding_accuracy\n";
  std::string jsonl;
  for (const auto& p : points) {
    csv += csv_number(p.scale) + "," + csv_number(p.toy_fid) + "," + csv_number(p.binding_accuracy) + "\n";
    jsonl += json_line({{"scale", p.scale},
                        {"toy_fid", p.toy_fid},
                        {"binding_accuracy", p.binding_accuracy},
                        {"checkpoint_hash", hash}});
    ctx.log << "scale " << p.scale << " toy_fid " << p.toy_fid << " binding " << p.binding_accuracy << "\n";
  }
  write_text(ctx.dir / "pareto.csv", csv);
  write_text(ctx.dir / "metrics.jsonl", jsonl);
  return 0;
}

json summary_json(const std::vector<double>& values) {
  const Summary s = summarize(values);
  return {{"mean", s.mean}, {"ci95_half_width", s.half_width}, {"values", values}};
}

int sweep_training(Context& ctx, fs::path* run_dir, bool experts) {
  const auto seeds = ctx.config.get_ints("sweep.seeds");
  const auto counts = ctx.config.get_ints("sweep.experts");
  const Corpus corpus = load_corpus(ctx.config);
  const TrainConfig base = train_config(ctx.config, corpus.vocab.size());
  eval_settings(ctx.config);
  open_run(ctx, run_dir);
  const Evaluator evaluator = make_evaluator(ctx);

  struct Arm {
    std::string label;
    TrainConfig config;
  };
  std::vector<Arm> arms;
  if (experts) {
    for (auto n : counts) {
      TrainConfig c = base;
      c.experts = static_cast<int>(n);
      c.validate();
      arms.push_back({"n=" + std::to_string(n), c});
    }
  } else {
    TrainConfig plain = base;
    plain.w_a = plain.w_l = 0.0;
    plain.policy.p_know = 0.0;
    arms.push_back({"baseline", plain});
    arms.push_back({"knowledge", base});
  }

  std::string csv = "arm,seed,toy_fid,binding_accuracy,final_loss\n";
  std::string jsonl;
  std::vector<std::vector<TrainEvalResult>> results(arms.size());
  for (std::size_t a = 0; a < arms.size(); ++a) {
    for (auto seed : seeds) {
      TrainConfig c = arms[a].config;
      c.seed = static_cast<std::uint64_t>(seed);
      c.checkpoint_every = 0;
      const TrainEvalResult r = train_and_evaluate(c, corpus.vocab, corpus.examples, evaluator);
      results[a].push_back(r);
      csv += arms[a].label + "," + std::to_string(seed) + "," + csv_number(r.toy_fid) + "," +
             csv_number(r.binding_accuracy) + "," + csv_number(r.final_loss) + "\n";
      jsonl += json_line({{"arm", arms[a].label},
                          {"seed", seed},
                          {"toy_fid", r.toy_fid},
                          {"binding_accuracy", r.binding_accuracy},
                          {"final_loss", r.final_loss}});
      ctx.log << arms[a].label << " seed " << seed << " toy_fid " << r.toy_fid << " binding " << r.binding_accuracy
              << "\n";
    }
  }
  json summary;
  for (std::size_t a = 0; a < arms.size(); ++a) {
    std::vector<double> fid, bind;
    for (const auto& r : results[a]) {
      fid.push_back(r.toy_fid);
      bind.push_back(r.binding_accuracy);
    }
    summary["arms"][arms[a].label] = {{"toy_fid", summary_json(fid)}, {"binding_accuracy", summary_json(bind)}};
  }
  if (experts) {
    // Seeds on which toy-FID does not increase as experts are added.
    int monotone = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      bool ok = true;
      for (std::size_t a = 1; a < arms.size(); ++a) ok = ok && results[a][s].toy_fid <= results[a - 1][s].toy_fid;
      monotone += ok ? 1 : 0;
    }
    summary["seeds_non_increasing"] = monotone;
    summary["seeds"] = seeds.size();
  } else {
    int wins = 0;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      wins += results[1][s].binding_accuracy >= results[0][s].binding_accuracy ? 1 : 0;
    }
    summary["seeds_knowledge_at_least_baseline"] = wins;
    summary["seeds"] = seeds.size();
  }
  write_text(ctx.dir / (experts ? "experts.csv" : "knowledge.csv"), csv);
  write_text(ctx.dir / "metrics.jsonl", jsonl);
  write_text(ctx.dir / "summary.json", summary.dump(2) + "\n");
  return 0;
}

int cmd_sweep(Context& ctx, fs::path* run_dir) {
  if (ctx.inv.count) ctx.config.set("eval.count", std::to_string(*ctx.inv.count));
  if (ctx.inv.steps) ctx.config.set("eval.steps", std::to_string(*ctx.inv.steps));
  const std::string kind = ctx.config.get_string("sweep.kind");
  if (kind == "guidance") return sweep_guidance(ctx, run_dir);
  if (kind == "experts") return sweep_training(ctx, run_dir, true);
  if (kind == "knowledge") return sweep_training(ctx, run_dir, false);
  fail(ErrorKind::ConfigError, "sweep.kind must be guidance, experts or knowledge");
}

int cmd_inspect_attn(Context& ctx, fs::path* run_dir) {
  if (ctx.inv.steps) ctx.config.set("attn.steps", std::to_string(*ctx.inv.steps));
  const auto steps = ctx.config.get_int("attn.steps");
  if (steps < 1) fail(ErrorKind::ConfigError, "attn.steps must be positive");
  const auto words = split_words(ctx.config.get_string("sample.prompt"));
  if (words.empty()) fail(ErrorKind::ConfigError, "inspect-attn needs a non-empty sample.prompt");
  const LoadedCheckpoint ckpt = require_checkpoint(ctx);
  if (!ckpt.config.conditional) fail(ErrorKind::CaptureDisabled, "checkpoint has no text conditioning");
  const NoiseSchedule schedule =
      NoiseSchedule::linear(ckpt.config.schedule_steps, ckpt.config.beta_start, ckpt.config.beta_end);
  ddim_timesteps(schedule.steps(), static_cast<int>(steps));
  const Vocabulary vocab = load_vocabulary(ctx.config, ctx.inv.checkpoint);
  check_vocab(vocab, ckpt.config);
  const BankPredictor predictor(ckpt.state.bank, tokenize_plain(vocab, words).tokens);
  const std::string hash = checkpoint_hash(*ctx.inv.checkpoint);
  open_run(ctx, run_dir);

  SampleOptions o;
  o.guidance = ctx.config.get_double("sample.guidance");
  o.seed = ctx.seed;
  o.capture_attention = true;
  const SampleTrajectory traj = sample_ddim(predictor, schedule, static_cast<int>(steps), o);
  const auto& dcfg = ckpt.state.bank.denoiser;
  const auto maps = capture_attention(traj, dcfg.grid_h(), dcfg.grid_w());
  write_ppm(ctx.dir / "image.ppm", traj.image);
  const fs::path adir = ctx.dir / "attn";
  fs::create_directories(adir);
  json series = json::array();
  std::vector<double> entropy;
  for (std::size_t k = 0; k < maps.size(); ++k) {
    std::ostringstream f;
    f << "step-" << std::setw(4) << std::setfill('0') << k << "-t" << traj.steps[k];
    write_csv(adir / (f.str() + ".csv"), maps[k]);
    write_pgm(adir / (f.str() + ".pgm"), maps[k]);
    entropy.push_back(spatial_entropy(maps[k]));
    series.push_back({{"index", k}, {"t", traj.steps[k]}, {"entropy", entropy.back()}});
  }
  // First and last tenth of the visited steps (at least one step each).
  const std::size_t tenth = std::max<std::size_t>(1, (entropy.size() + 9) / 10);
  double head = 0.0, tail = 0.0;
  for (std::size_t k = 0; k < tenth; ++k) {
    head += entropy[k];
    tail += entropy[entropy.size() - 1 - k];
  }
  head /= static_cast<double>(tenth);
  tail /= static_cast<double>(tenth);
  const json summary = {{"prompt", words},
                        {"seed", ctx.seed},
                        {"guidance", o.guidance},
                        {"checkpoint_hash", hash},
                        {"max_entropy", std::log(static_cast<double>(dcfg.image_tokens()))},
                        {"entropy_first_tenth", head},
                        {"entropy_last_tenth", tail},
                        {"steps", series}};
  write_text(ctx.dir / "summary.json", summary.dump(2) + "\n");
  ctx.log << "entropy first tenth " << head << " last tenth " << tail << "\n";
  return 0;
}

int cmd_check_grad(Context& ctx, fs::path* run_dir) {
  GradCheckOptions options;
  options.step = ctx.config.get_double("grad.step");
  options.tolerance = ctx.config.get_double("grad.tolerance");
  if (!(options.step > 0.0)) fail(ErrorKind::ConfigError, "grad.step must be positive");
  open_run(ctx, run_dir);
  const ToyProblem toy = toy_problem(ctx.seed);
  const GradCheckReport report = check_loss_gradients(toy, options, ctx.seed);
  json leaves = json::array();
  for (const auto& l : report.leaves) {
    leaves.push_back({{"leaf", l.label}, {"probed", l.probed}, {"max_relative_error", l.max_relative_error}});
  }
  const json summary = {{"max_relative_error", report.max_relative_error},
                        {"tolerance", options.tolerance},
                        {"passed", report.passed},
                        {"leaves", leaves}};
  write_text(ctx.dir / "gradcheck.json", summary.dump(2) + "\n");
  ctx.log << "max_relative_error " << report.max_relative_error << " tolerance " << options.tolerance << " "
          << (report.passed ? "pass" : "FAIL") << "\n";
  return report.passed ? 0 : kExitNumeric;
}

}  // namespace

int run(const Invocation& inv, std::ostream& log, std::ostream& err, fs::path* run_dir) {
  try {
    bool known = false;
    for (const char* c : kCommands) known = known || inv.command == c;
    if (!known) fail(ErrorKind::ConfigError, "unknown command '" + inv.command + "'");
    Context ctx{inv, inv.config ? Config::load(*inv.config) : Config::defaults(), 0, log, {}};
    for (const auto& o : inv.overrides) ctx.config.apply(o);
    if (inv.seed) ctx.config.set("seed", std::to_string(*inv.seed));
    ctx.seed = static_cast<std::uint64_t>(ctx.config.get_int("seed"));

    if (inv.command == "gen-data") return cmd_gen_data(ctx, run_dir);
    if (inv.command == "train") return cmd_train(ctx, run_dir);
    if (inv.command == "sample") return cmd_sample(ctx, run_dir);
    if (inv.command == "eval") return cmd_eval(ctx, run_dir);
    if (inv.command == "sweep") return cmd_sweep(ctx, run_dir);
    if (inv.command == "inspect-attn") return cmd_inspect_attn(ctx, run_dir);
    return cmd_check_grad(ctx, run_dir);
  } catch (const Error& e) {
    err << "error class=" << error_class(e.kind()) << " kind=" << to_string(e.kind()) << " message=" << std::quoted(e.what())
        << "\n";
    return exit_code(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error class=DataError kind=IoError message=" << std::quoted(e.what()) << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error class=InternalNumericError kind=Internal message=" << std::quoted(e.what()) << "\n";
    return kExitNumeric;
  }
}

}  // namespace kdiff
