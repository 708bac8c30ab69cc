#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kdiff/error.hpp"

namespace kdiff {

struct Invocation {
  std::string command;
  std::optional<std::filesystem::path> config;
  std::vector<std::string> overrides;
  std::filesystem::path out = "runs";
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::string> scales;
  std::optional<std::int64_t> steps;
  std::optional<std::int64_t> count;
};

inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitCheckpoint = 4;
inline constexpr int kExitNumeric = 5;

/// Error class name and exit code for an error kind.
const char* error_class(ErrorKind kind);
int exit_code(ErrorKind kind);

/// Runs one command. Outputs go to a fresh `<command>-<timestamp>-<seed>`
/// directory under `out`; progress goes to `log`, and failures are reported
/// as a single `error class=... kind=... message=...` line on `err`.
/// `run_dir`, when given, receives the run directory once it exists.
int run(const Invocation& invocation, std::ostream& log, std::ostream& err,
        std::filesystem::path* run_dir = nullptr);

}  // namespace kdiff
