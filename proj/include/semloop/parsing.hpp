#pragma once

// Completion post-processing: think-block stripping, summary extraction and
// score extraction. Invalid outcomes are the zero-reward format gate.

#include <string>
#include <string_view>
#include <variant>

#include "semloop/data_model.hpp"

namespace semloop {

enum class ParseFailure {
  MissingThinkClose,
  EmptySummary,
  NoScoreToken,
  ScoreOutOfRange,
  NonIntegerScore,
};

std::string_view parse_failure_name(ParseFailure f);

template <typename T>
class ParseOutcome {
 public:
  ParseOutcome(T value) : state_(std::move(value)) {}  // NOLINT: implicit Valid
  ParseOutcome(ParseFailure f) : state_(f) {}           // NOLINT: implicit Invalid

  bool valid() const noexcept { return std::holds_alternative<T>(state_); }
  explicit operator bool() const noexcept { return valid(); }
  const T& value() const { return std::get<T>(state_); }
  ParseFailure failure() const { return std::get<ParseFailure>(state_); }

  friend bool operator==(const ParseOutcome&, const ParseOutcome&) = default;

 private:
  std::variant<T, ParseFailure> state_;
};

// Text after the last `</think>`, trimmed. `<think>` without a close is
// MissingThinkClose; no tags at all is EmptySummary when tags are required.
ParseOutcome<std::string> strip_think(std::string_view completion, bool require_tags);

ParseOutcome<std::string> extract_summary(std::string_view completion, bool require_tags);

// First case-insensitive `score [ \t]* : [ \t]* [0-9]+` after stripping, with
// a token boundary before `score`.
ParseOutcome<Score> extract_score(std::string_view completion, bool require_tags);

}  // namespace semloop
