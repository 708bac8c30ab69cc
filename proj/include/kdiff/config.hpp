#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kdiff/dataset.hpp"
#include "kdiff/evaluation.hpp"
#include "kdiff/trainer.hpp"

namespace kdiff {

/// Flat `key = value` settings with dotted namespaces. Every key has a
/// registered type and default; unknown keys and unparsable values raise
/// ConfigError.
class Config {
 public:
  enum class Type { Int, Float, Bool, String, FloatList, IntList };

  static Config defaults();
  /// Defaults overlaid with a file. '#' starts a comment; blank lines are skipped.
  static Config load(const std::filesystem::path& path);
  static Type type_of(const std::string& key);

  void set(const std::string& key, const std::string& value);
  /// "key=value" form used by --set.
  void apply(const std::string& assignment);

  const std::string& raw(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::string get_string(const std::string& key) const { return raw(key); }
  std::vector<double> get_doubles(const std::string& key) const;
  std::vector<std::int64_t> get_ints(const std::string& key) const;

  /// Sorted `key = value` lines; loading the dump reproduces the config.
  std::string dump() const;

 private:
  std::map<std::string, std::string> values_;
};

SceneOptions scene_options(const Config& config);
TrainConfig train_config(const Config& config, std::size_t vocab_size);
EvalSettings eval_settings(const Config& config);

}  // namespace kdiff
