#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sslprop {

enum class ErrorCode {
  MissingFile,
  MalformedHeader,
  SizeMismatch,
  InvariantViolation,
  IoFailure,
  MalformedManifest,
  DuplicateCaseId,
  MissingReferencedFile,
  ShapeMismatch,
  SpacingMismatch,
  BadFoldCount,
  InPlaneMismatch,
  BadInsertIndex,
  FrameCountMismatch,
  BackendFailure,
  Timeout,
  DegenerateTrainingSet,
  UntrainedModel,
  EmptyLabelledSet,
  EmptyMask,
  BadSpec,
  CoverageFailure,
  StoreError,
  ConfigError,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::DuplicateCaseId: return "DuplicateCaseId";
    case ErrorCode::MissingReferencedFile: return "MissingReferencedFile";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::SpacingMismatch: return "SpacingMismatch";
    case ErrorCode::BadFoldCount: return "BadFoldCount";
    case ErrorCode::InPlaneMismatch: return "InPlaneMismatch";
    case ErrorCode::BadInsertIndex: return "BadInsertIndex";
    case ErrorCode::FrameCountMismatch: return "FrameCountMismatch";
    case ErrorCode::BackendFailure: return "BackendFailure";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::DegenerateTrainingSet: return "DegenerateTrainingSet";
    case ErrorCode::UntrainedModel: return "UntrainedModel";
    case ErrorCode::EmptyLabelledSet: return "EmptyLabelledSet";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::BadSpec: return "BadSpec";
    case ErrorCode::CoverageFailure: return "CoverageFailure";
    case ErrorCode::StoreError: return "StoreError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Single exception type for the library. The code identifies the failure
/// class; the message carries the context (path, case id, fold).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// Message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace sslprop
