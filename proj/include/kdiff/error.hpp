#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kdiff {

enum class ErrorKind {
  ShapeMismatch,
  NonFinite,
  NotScalarRoot,
  ForwardNotRun,
  InvalidStep,
  InvalidRange,
  StepOutOfRange,
  StepOrderViolation,
  UnknownWord,
  TagMismatch,
  VocabularyOverflow,
  NegativeScale,
  IndivisibleShape,
  InvalidExpertCount,
  EmptyBatch,
  BadMagic,
  VersionUnsupported,
  TruncatedFile,
  ChecksumMismatch,
  StepsExceedT,
  CaptureDisabled,
  DimensionMismatch,
  AlignmentMismatch,
  ConfigError,
  DataError,
  IoError,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library. The kind is stable and is what
/// callers (and the CLI exit-code mapping) dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace kdiff
