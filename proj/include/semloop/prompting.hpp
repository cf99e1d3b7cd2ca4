#pragma once

// Stage-1 (abstraction) and Stage-2 (inference) prompt rendering. Stage 2
// sees only the summary text and the task name.

#include <string>
#include <string_view>

#include "semloop/data_model.hpp"

namespace semloop {

// Shortest decimal with at most two fractional digits, ties to even,
// trailing zeros trimmed: 7.50 -> "7.5", 3.0 -> "3", -0.001 -> "0".
std::string format_value(double v);

// Validates the window against the schema first; throws its errors.
std::string render_stage1(const BehavioralWindow& w, const FeatureSchema& s);

// Throws EmptySummary when the summary is blank after trimming.
std::string render_stage2(std::string_view summary, TaskKind task);

// Fixed Stage-1 grammar fragments, shared with code that reads prompts back.
namespace stage1_grammar {
inline constexpr std::string_view kIntroPrefix = "You are analyzing ";
inline constexpr std::string_view kIntroSuffix = " days of passive sensing data for one person.";
inline constexpr std::string_view kDataHeader = "Data (one block per day, oldest first):";
inline constexpr std::string_view kMissing = "not recorded";
inline constexpr std::string_view kTask =
    "Task: Summarize this person's behavioral patterns, trajectories, and notable "
    "fluctuations over the full period in natural language. Do not restate every number.";
}  // namespace stage1_grammar

namespace stage2_grammar {
inline constexpr std::string_view kIntro =
    "You are given a behavioral summary of one person's past two weeks.";
inline constexpr std::string_view kSummaryHeader = "Summary:";
inline constexpr std::string_view kInstructionPrefix =
    "Based only on this summary, infer the person's PHQ-4 ";
}  // namespace stage2_grammar

// Returns the summary embedded in a Stage-2 prompt, or nullopt when the text
// does not follow the Stage-2 grammar.
std::optional<std::string> summary_from_stage2_prompt(std::string_view prompt);

}  // namespace semloop
