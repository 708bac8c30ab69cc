#include "kdiff/error.hpp"

namespace kdiff {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::NotScalarRoot: return "NotScalarRoot";
    case ErrorKind::ForwardNotRun: return "ForwardNotRun";
    case ErrorKind::InvalidStep: return "InvalidStep";
    case ErrorKind::InvalidRange: return "InvalidRange";
    case ErrorKind::StepOutOfRange: return "StepOutOfRange";
    case ErrorKind::StepOrderViolation: return "StepOrderViolation";
    case ErrorKind::UnknownWord: return "UnknownWord";
    case ErrorKind::TagMismatch: return "TagMismatch";
    case ErrorKind::VocabularyOverflow: return "VocabularyOverflow";
    case ErrorKind::NegativeScale: return "NegativeScale";
    case ErrorKind::IndivisibleShape: return "IndivisibleShape";
    case ErrorKind::InvalidExpertCount: return "InvalidExpertCount";
    case ErrorKind::EmptyBatch: return "EmptyBatch";
    case ErrorKind::BadMagic: return "BadMagic";
    case ErrorKind::VersionUnsupported: return "VersionUnsupported";
    case ErrorKind::TruncatedFile: return "TruncatedFile";
    case ErrorKind::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorKind::StepsExceedT: return "StepsExceedT";
    case ErrorKind::CaptureDisabled: return "CaptureDisabled";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::AlignmentMismatch: return "AlignmentMismatch";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::DataError: return "DataError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Unknown";
}

}  // namespace kdiff
