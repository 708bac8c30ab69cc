#include "kdiff/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kdiff/error.hpp"

namespace kdiff {

namespace {

struct KeySpec {
  const char* key;
  Config::Type type;
  const char* fallback;
};

using T = Config::Type;

// Defaults are sized for a single CPU; the knowledge and optimizer
// settings follow the method's published values.
constexpr KeySpec kKeys[] = {
    {"seed", T::Int, "0"},
    {"schedule.T", T::Int, "1000"},
    {"schedule.beta_start", T::Float, "0.0001"},
    {"schedule.beta_end", T::Float, "0.02"},
    {"data.dir", T::String, ""},
    {"data.count", T::Int, "2048"},
    {"data.seed", T::Int, "1"},
    {"data.height", T::Int, "32"},
    {"data.width", T::Int, "32"},
    {"data.min_objects", T::Int, "1"},
    {"data.max_objects", T::Int, "3"},
    {"data.omit_prob", T::Float, "0.3"},
    {"model.patch", T::Int, "4"},
    {"model.d_model", T::Int, "128"},
    {"model.layers", T::Int, "4"},
    {"model.ffn_mult", T::Int, "4"},
    {"model.init_std", T::Float, "0.02"},
    {"model.scale_mode", T::String, "multiplicative"},
    {"text.d_text", T::Int, "64"},
    {"text.layers", T::Int, "1"},
    {"text.ffn_mult", T::Int, "2"},
    {"text.init_std", T::Float, "0.02"},
    {"text.vocab", T::String, ""},
    {"mode.n", T::Int, "10"},
    {"mode.warmup_steps", T::Int, "0"},
    {"knowledge.w_a", T::Float, "0.01"},
    {"knowledge.w_l", T::Float, "0.1"},
    {"knowledge.p_know", T::Float, "0.5"},
    {"knowledge.p_cap", T::Float, "0.1"},
    {"knowledge.insert_tokens", T::Bool, "true"},
    {"knowledge.scale_attention", T::Bool, "true"},
    {"knowledge.weight_loss", T::Bool, "true"},
    {"knowledge.append_labels", T::Bool, "true"},
    {"train.conditional", T::Bool, "true"},
    {"train.p_uncond", T::Float, "0.1"},
    {"train.lr", T::Float, "0.00009"},
    {"train.beta1", T::Float, "0.9"},
    {"train.beta2", T::Float, "0.999"},
    {"train.eps", T::Float, "1e-08"},
    {"train.weight_decay", T::Float, "0.01"},
    {"train.batch_size", T::Int, "16"},
    {"train.steps", T::Int, "1000"},
    {"train.log_every", T::Int, "10"},
    {"train.checkpoint_every", T::Int, "0"},
    {"train.storage", T::String, "f64"},
    {"sample.sampler", T::String, "ddim"},
    {"sample.steps", T::Int, "50"},
    {"sample.guidance", T::Float, "2.1"},
    {"sample.count", T::Int, "1"},
    {"sample.prompt", T::String, "a red square at top left and a blue circle at bottom right"},
    {"sample.capture", T::Bool, "false"},
    {"eval.count", T::Int, "2048"},
    {"eval.reference_count", T::Int, "2048"},
    {"eval.feature_dim", T::Int, "64"},
    {"eval.prompt_objects", T::Int, "0"},
    {"eval.guidance", T::Float, "2.1"},
    {"eval.steps", T::Int, "50"},
    {"sweep.kind", T::String, "guidance"},
    {"sweep.scales", T::FloatList, "2,3,4,5,6,7,8,9"},
    {"sweep.experts", T::IntList, "1,2,5"},
    {"sweep.seeds", T::IntList, "1,2,3"},
    {"attn.steps", T::Int, "50"},
    {"grad.step", T::Float, "1e-05"},
    {"grad.tolerance", T::Float, "1e-05"},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kKeys) {
    if (key == k.key) return &k;
  }
  return nullptr;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class Num>
bool parse_number(std::string_view s, Num& out) {
  const auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1") return out = true, true;
  if (s == "false" || s == "0") return out = false, true;
  return false;
}

bool valid_value(Config::Type type, const std::string& v) {
  std::int64_t i;
  double d;
  bool b;
  switch (type) {
    case T::Int: return parse_number(v, i);
    case T::Float: return parse_number(v, d) && std::isfinite(d);
    case T::Bool: return parse_bool(v, b);
    case T::String: return true;
    case T::FloatList:
    case T::IntList: {
      const auto items = split_list(v);
      if (items.empty()) return false;
      for (const auto& it : items) {
        if (type == T::FloatList ? !(parse_number(it, d) && std::isfinite(d)) : !parse_number(it, i)) return false;
      }
      return true;
    }
  }
  return false;
}

}  // namespace

Config Config::defaults() {
  Config c;
  for (const auto& k : kKeys) c.values_[k.key] = k.fallback;
  return c;
}

Config::Type Config::type_of(const std::string& key) {
  const KeySpec* k = find_key(key);
  if (!k) fail(ErrorKind::ConfigError, "unknown config key '" + key + "'");
  return k->type;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::ConfigError, "cannot read config file " + path.string());
  Config c = defaults();
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string body = trim(line.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      fail(ErrorKind::ConfigError, path.string() + ":" + std::to_string(number) + ": expected key = value");
    }
    c.set(trim(body.substr(0, eq)), trim(body.substr(eq + 1)));
  }
  return c;
}

void Config::set(const std::string& key, const std::string& value) {
  const Type type = type_of(key);
  const std::string v = trim(value);
  if (!valid_value(type, v)) fail(ErrorKind::ConfigError, "bad value '" + v + "' for key '" + key + "'");
  values_[key] = v;
}

void Config::apply(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) fail(ErrorKind::ConfigError, "override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& Config::raw(const std::string& key) const {
  type_of(key);
  return values_.at(key);
}

std::int64_t Config::get_int(const std::string& key) const {
  std::int64_t v = 0;
  if (type_of(key) != Type::Int || !parse_number(raw(key), v)) fail(ErrorKind::ConfigError, key + " is not an integer");
  return v;
}

double Config::get_double(const std::string& key) const {
  double v = 0;
  if (type_of(key) != Type::Float || !parse_number(raw(key), v)) fail(ErrorKind::ConfigError, key + " is not a number");
  return v;
}

bool Config::get_bool(const std::string& key) const {
  bool v = false;
  if (type_of(key) != Type::Bool || !parse_bool(raw(key), v)) fail(ErrorKind::ConfigError, key + " is not a boolean");
  return v;
}

std::vector<double> Config::get_doubles(const std::string& key) const {
  if (type_of(key) != Type::FloatList) fail(ErrorKind::ConfigError, key + " is not a number list");
  std::vector<double> out;
  for (const auto& s : split_list(raw(key))) {
    double v = 0;
    parse_number(s, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::int64_t> Config::get_ints(const std::string& key) const {
  if (type_of(key) != Type::IntList) fail(ErrorKind::ConfigError, key + " is not an integer list");
  std::vector<std::int64_t> out;
  for (const auto& s : split_list(raw(key))) {
    std::int64_t v = 0;
    parse_number(s, v);
    out.push_back(v);
  }
  return out;
}

std::string Config::dump() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

namespace {

std::size_t positive(const Config& c, const std::string& key) {
  const auto v = c.get_int(key);
  if (v < 1) fail(ErrorKind::ConfigError, key + " must be positive");
  return static_cast<std::size_t>(v);
}

double probability(const Config& c, const std::string& key) {
  const double p = c.get_double(key);
  if (p < 0.0 || p > 1.0) fail(ErrorKind::ConfigError, key + " must lie in [0, 1]");
  return p;
}

}  // namespace

SceneOptions scene_options(const Config& c) {
  SceneOptions s;
  s.height = positive(c, "data.height");
  s.width = positive(c, "data.width");
  s.min_objects = static_cast<int>(c.get_int("data.min_objects"));
  s.max_objects = static_cast<int>(c.get_int("data.max_objects"));
  s.omit_prob = probability(c, "data.omit_prob");
  if (s.height % 2 || s.width % 2) fail(ErrorKind::ConfigError, "data.height and data.width must be even");
  if (s.min_objects < 1 || s.max_objects > kCells || s.min_objects > s.max_objects) {
    fail(ErrorKind::ConfigError, "object counts must satisfy 1 <= data.min_objects <= data.max_objects <= 4");
  }
  return s;
}

TrainConfig train_config(const Config& c, std::size_t vocab_size) {
  TrainConfig t;
  t.schedule_steps = static_cast<int>(positive(c, "schedule.T"));
  t.beta_start = c.get_double("schedule.beta_start");
  t.beta_end = c.get_double("schedule.beta_end");
  const SceneOptions scene = scene_options(c);
  t.denoiser.height = scene.height;
  t.denoiser.width = scene.width;
  t.denoiser.channels = 3;
  t.denoiser.patch = positive(c, "model.patch");
  t.denoiser.d_model = positive(c, "model.d_model");
  t.denoiser.layers = positive(c, "model.layers");
  t.denoiser.ffn_mult = positive(c, "model.ffn_mult");
  t.denoiser.init_std = c.get_double("model.init_std");
  t.denoiser.schedule_steps = t.schedule_steps;
  const std::string mode = c.get_string("model.scale_mode");
  if (mode == "multiplicative") {
    t.denoiser.scale_mode = ScaleMode::Multiplicative;
  } else if (mode == "additive") {
    t.denoiser.scale_mode = ScaleMode::Additive;
  } else {
    fail(ErrorKind::ConfigError, "model.scale_mode must be multiplicative or additive");
  }
  t.text.vocab_size = vocab_size;
  t.text.d_text = positive(c, "text.d_text");
  t.text.layers = positive(c, "text.layers");
  t.text.ffn_mult = positive(c, "text.ffn_mult");
  t.text.init_std = c.get_double("text.init_std");
  t.denoiser.d_text = t.text.d_text;
  t.experts = static_cast<int>(c.get_int("mode.n"));
  t.warmup_steps = c.get_int("mode.warmup_steps");
  t.w_a = c.get_double("knowledge.w_a");
  t.w_l = c.get_double("knowledge.w_l");
  t.policy.p_know = probability(c, "knowledge.p_know");
  t.policy.p_cap = probability(c, "knowledge.p_cap");
  t.policy.insert_tokens = c.get_bool("knowledge.insert_tokens");
  t.policy.scale_attention = c.get_bool("knowledge.scale_attention");
  t.policy.weight_loss = c.get_bool("knowledge.weight_loss");
  t.policy.append_labels = c.get_bool("knowledge.append_labels");
  t.conditional = c.get_bool("train.conditional");
  t.p_uncond = probability(c, "train.p_uncond");
  t.adam.lr = c.get_double("train.lr");
  t.adam.beta1 = c.get_double("train.beta1");
  t.adam.beta2 = c.get_double("train.beta2");
  t.adam.eps = c.get_double("train.eps");
  t.adam.weight_decay = c.get_double("train.weight_decay");
  t.batch_size = static_cast<int>(c.get_int("train.batch_size"));
  t.train_steps = c.get_int("train.steps");
  t.log_every = c.get_int("train.log_every");
  t.checkpoint_every = c.get_int("train.checkpoint_every");
  t.seed = static_cast<std::uint64_t>(c.get_int("seed"));
  try {
    t.validate();
  } catch (const Error& e) {
    // Model-level validation failures are configuration problems here.
    fail(ErrorKind::ConfigError, e.what());
  }
  return t;
}

EvalSettings eval_settings(const Config& c) {
  EvalSettings s;
  s.eval_count = static_cast<int>(c.get_int("eval.count"));
  s.reference_count = static_cast<int>(c.get_int("eval.reference_count"));
  if (s.eval_count < 2 || s.reference_count < 2) fail(ErrorKind::ConfigError, "eval counts must be at least 2");
  s.feature_dim = positive(c, "eval.feature_dim");
  s.prompt_objects = static_cast<int>(c.get_int("eval.prompt_objects"));
  if (s.prompt_objects < 0 || s.prompt_objects > kCells) fail(ErrorKind::ConfigError, "eval.prompt_objects out of range");
  s.guidance = c.get_double("eval.guidance");
  s.ddim_steps = static_cast<int>(c.get_int("eval.steps"));
  if (s.ddim_steps < 1) fail(ErrorKind::ConfigError, "eval.steps must be positive");
  s.scene = scene_options(c);
  return s;
}

}  // namespace kdiff
