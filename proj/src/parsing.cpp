#include "semloop/parsing.hpp"

#include <cctype>

namespace semloop {

namespace {

constexpr std::string_view kOpen = "<think>";
constexpr std::string_view kClose = "</think>";

std::string trimmed(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool matches_score_word(std::string_view text, std::size_t at) {
  constexpr std::string_view word = "score";
  if (at + word.size() > text.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(text[at + i])) != word[i]) return false;
  return at == 0 || !is_alnum(text[at - 1]);
}

std::size_t skip_blanks(std::string_view text, std::size_t i) {
  while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
  return i;
}

}  // namespace

std::string_view parse_failure_name(ParseFailure f) {
  switch (f) {
    case ParseFailure::MissingThinkClose: return "missing-think-close";
    case ParseFailure::EmptySummary: return "empty-summary";
    case ParseFailure::NoScoreToken: return "no-score-token";
    case ParseFailure::ScoreOutOfRange: return "score-out-of-range";
    case ParseFailure::NonIntegerScore: return "non-integer-score";
  }
  return "unknown";
}

ParseOutcome<std::string> strip_think(std::string_view completion, bool require_tags) {
  if (const auto close = completion.rfind(kClose); close != std::string_view::npos)
    return trimmed(completion.substr(close + kClose.size()));
  if (completion.find(kOpen) != std::string_view::npos) return ParseFailure::MissingThinkClose;
  if (require_tags) return ParseFailure::EmptySummary;
  return trimmed(completion);
}

ParseOutcome<std::string> extract_summary(std::string_view completion, bool require_tags) {
  auto stripped = strip_think(completion, require_tags);
  if (!stripped) return stripped;
  if (stripped.value().empty()) return ParseFailure::EmptySummary;
  return stripped;
}

ParseOutcome<Score> extract_score(std::string_view completion, bool require_tags) {
  const auto stripped = strip_think(completion, require_tags);
  if (!stripped) return stripped.failure();
  const std::string_view text = stripped.value();

  for (std::size_t at = 0; at < text.size(); ++at) {
    if (!matches_score_word(text, at)) continue;
    std::size_t i = skip_blanks(text, at + 5);
    if (i >= text.size() || text[i] != ':') continue;
    i = skip_blanks(text, i + 1);
    if (i < text.size() && (text[i] == '-' || text[i] == '+') && i + 1 < text.size() &&
        is_digit(text[i + 1]))
      return ParseFailure::NonIntegerScore;
    if (i >= text.size() || !is_digit(text[i])) continue;

    const std::size_t digits_begin = i;
    while (i < text.size() && is_digit(text[i])) ++i;
    if (i + 1 < text.size() && (text[i] == '.' || text[i] == ',') && is_digit(text[i + 1]))
      return ParseFailure::NonIntegerScore;
    const std::string_view digits = text.substr(digits_begin, i - digits_begin);
    const auto nz = digits.find_first_not_of('0');
    if (nz == std::string_view::npos) return Score(0);
    if (digits.size() - nz > 1) return ParseFailure::ScoreOutOfRange;
    const int v = digits.back() - '0';
    if (v > Score::kMax) return ParseFailure::ScoreOutOfRange;
    return Score(v);
  }
  return ParseFailure::NoScoreToken;
}

}  // namespace semloop
