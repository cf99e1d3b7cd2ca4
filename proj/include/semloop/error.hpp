#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semloop {

enum class ErrorCode {
  UnknownName,
  InvalidScore,
  WrongLength,
  NonConsecutiveDates,
  MixedSubjects,
  UnknownFeatureKey,
  InvalidSchema,
  MalformedCsv,
  UnknownFeatureColumn,
  LabelOutOfRange,
  DuplicateLabelRow,
  SingleSubset,
  InvalidConfig,
  EmptySummary,
  UnparseablePrompt,
  ShapeMismatch,
  TransportError,
  Timeout,
  MalformedResponse,
  ProviderExhausted,
  GroupTooSmall,
  MissingDecisions,
  EmptySet,
  LengthMismatch,
  DegenerateDesign,
  IoError,
};

std::string_view error_code_name(ErrorCode code);

// All library failures surface as this exception type; `code()` is the
// machine-readable kind, `what()` is "<kind>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + detail),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownName: return "unknown-name";
    case ErrorCode::InvalidScore: return "invalid-score";
    case ErrorCode::WrongLength: return "wrong-length";
    case ErrorCode::NonConsecutiveDates: return "non-consecutive-dates";
    case ErrorCode::MixedSubjects: return "mixed-subjects";
    case ErrorCode::UnknownFeatureKey: return "unknown-feature-key";
    case ErrorCode::InvalidSchema: return "invalid-schema";
    case ErrorCode::MalformedCsv: return "malformed-csv";
    case ErrorCode::UnknownFeatureColumn: return "unknown-feature-column";
    case ErrorCode::LabelOutOfRange: return "label-out-of-range";
    case ErrorCode::DuplicateLabelRow: return "duplicate-label-row";
    case ErrorCode::SingleSubset: return "single-subset";
    case ErrorCode::InvalidConfig: return "invalid-config";
    case ErrorCode::EmptySummary: return "empty-summary";
    case ErrorCode::UnparseablePrompt: return "unparseable-prompt";
    case ErrorCode::ShapeMismatch: return "shape-mismatch";
    case ErrorCode::TransportError: return "transport-error";
    case ErrorCode::Timeout: return "timeout";
    case ErrorCode::MalformedResponse: return "malformed-response";
    case ErrorCode::ProviderExhausted: return "provider-exhausted";
    case ErrorCode::GroupTooSmall: return "group-too-small";
    case ErrorCode::MissingDecisions: return "missing-decisions";
    case ErrorCode::EmptySet: return "empty-set";
    case ErrorCode::LengthMismatch: return "length-mismatch";
    case ErrorCode::DegenerateDesign: return "degenerate-design";
    case ErrorCode::IoError: return "io-error";
  }
  return "unknown";
}

}  // namespace semloop
