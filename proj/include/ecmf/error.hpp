#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ecmf {

enum class ErrorCode {
  InvalidConfig,
  IoFailure,
  ParseFailure,
  MissingStream,
  DimMismatch,
  NonFiniteValue,
  DuplicateRecord,
  EmptyDataset,
  SchemaMismatch,
  TooFewSamples,
  ShapeMismatch,
  NonFiniteGradient,
  NonFiniteLoss,
  LengthMismatch,
  EmptyInput,
  MissingPrediction,
  NotFound,
  AlreadyReviewed,
  DuplicateVariant,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::MissingStream: return "MissingStream";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::DuplicateRecord: return "DuplicateRecord";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::SchemaMismatch: return "SchemaMismatch";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingPrediction: return "MissingPrediction";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::AlreadyReviewed: return "AlreadyReviewed";
    case ErrorCode::DuplicateVariant: return "DuplicateVariant";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
/// The message always names the offending sample/stream/flag when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace ecmf
