#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace finetag {

// Every failure surfaced by the library carries one of these codes so
// callers (and the CLI exit-code mapping) can react without string matching.
enum class ErrorCode {
  // parsing / dataset
  DuplicateId,
  NonContiguousIds,
  MalformedLine,
  ImageIdOutOfRange,
  AttributeIdOutOfRange,
  InvalidPresenceFlag,
  ValSizeTooLarge,
  UnknownImageId,
  MissingFile,
  // feature store
  MixedChannelCount,
  DuplicateImageId,
  IoFailure,
  MissingId,
  CorruptRecord,
  NonFiniteValue,
  // projection fitting
  RankDeficient,
  DegenerateSamples,
  PerImageTooLarge,
  // layers / model
  ShapeMismatch,
  SpatialShapeMismatch,
  DimMismatch,
  StaleCache,
  // losses / metrics
  EmptyPositiveSet,
  EmptyNegativeSet,
  NonFiniteLogit,
  AllImagesSkipped,
  EmptyRelevantSet,
  LengthMismatch,
  // training / serialization
  NonFiniteLoss,
  ChecksumMismatch,
  BadFormat,
  ConfigMismatch,
  // numerical probes
  NonFiniteEvaluation,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NonContiguousIds: return "NonContiguousIds";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::ImageIdOutOfRange: return "ImageIdOutOfRange";
    case ErrorCode::AttributeIdOutOfRange: return "AttributeIdOutOfRange";
    case ErrorCode::InvalidPresenceFlag: return "InvalidPresenceFlag";
    case ErrorCode::ValSizeTooLarge: return "ValSizeTooLarge";
    case ErrorCode::UnknownImageId: return "UnknownImageId";
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MixedChannelCount: return "MixedChannelCount";
    case ErrorCode::DuplicateImageId: return "DuplicateImageId";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MissingId: return "MissingId";
    case ErrorCode::CorruptRecord: return "CorruptRecord";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::DegenerateSamples: return "DegenerateSamples";
    case ErrorCode::PerImageTooLarge: return "PerImageTooLarge";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SpatialShapeMismatch: return "SpatialShapeMismatch";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::EmptyPositiveSet: return "EmptyPositiveSet";
    case ErrorCode::EmptyNegativeSet: return "EmptyNegativeSet";
    case ErrorCode::NonFiniteLogit: return "NonFiniteLogit";
    case ErrorCode::AllImagesSkipped: return "AllImagesSkipped";
    case ErrorCode::EmptyRelevantSet: return "EmptyRelevantSet";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::BadFormat: return "BadFormat";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::NonFiniteEvaluation: return "NonFiniteEvaluation";
  }
  return "UnknownError";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Input-validation failures map to CLI exit code 2; everything else is a
// runtime failure (exit code 1).
inline bool is_usage_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValSizeTooLarge:
    case ErrorCode::RankDeficient:
    case ErrorCode::PerImageTooLarge:
    case ErrorCode::MissingFile:
    case ErrorCode::DimMismatch:
    case ErrorCode::ConfigMismatch:
      return true;
    default:
      return false;
  }
}

}  // namespace finetag
