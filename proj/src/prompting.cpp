#include "semloop/prompting.hpp"

#include <cmath>
#include <cstdio>

namespace semloop {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string stage2_instruction(TaskKind task) {
  std::string out(stage2_grammar::kInstructionPrefix);
  out += task_name(task);
  out +=
      " subscore, an integer from 0 to 6 where 0 means no symptoms and 6 means severe "
      "symptoms.\nRespond with exactly one line: score: <integer>\n";
  return out;
}

}  // namespace

std::string format_value(double v) {
  // printf rounds the exact binary value to nearest, ties to even.
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (const auto dot = s.find('.'); dot != std::string::npos) {
    while (s.back() == '0') s.pop_back();
    if (s.back() == '.') s.pop_back();
  }
  if (s == "-0") s = "0";
  return s;
}

std::string render_stage1(const BehavioralWindow& w, const FeatureSchema& s) {
  validate_window(w, s, w.days.size() == 0 ? kDefaultWindowLength : w.days.size());
  std::string out;
  out.reserve(64 * s.size() * w.days.size() + 512);
  out += stage1_grammar::kIntroPrefix;
  out += std::to_string(w.days.size());
  out += stage1_grammar::kIntroSuffix;
  out += '\n';
  out += stage1_grammar::kDataHeader;
  out += '\n';
  for (std::size_t i = 0; i < w.days.size(); ++i) {
    const auto& day = w.days[i];
    out += "Day " + std::to_string(i + 1) + " (" + format_iso_date(day.date) + "):\n";
    for (const auto& f : s.features()) {
      out += "- ";
      out += f.label;
      out += ": ";
      const auto it = day.values.find(f.key);
      if (it != day.values.end() && it->second) {
        out += format_value(*it->second);
        out += ' ';
        out += f.unit;
      } else {
        out += stage1_grammar::kMissing;
      }
      out += '\n';
    }
  }
  out += stage1_grammar::kTask;
  out += '\n';
  return out;
}

std::string render_stage2(std::string_view summary, TaskKind task) {
  if (trim(summary).empty()) throw Error(ErrorCode::EmptySummary, "summary is blank");
  std::string out(stage2_grammar::kIntro);
  out += '\n';
  out += stage2_grammar::kSummaryHeader;
  out += '\n';
  out += summary;
  out += '\n';
  out += stage2_instruction(task);
  return out;
}

std::optional<std::string> summary_from_stage2_prompt(std::string_view prompt) {
  std::string head(stage2_grammar::kIntro);
  head += '\n';
  head += stage2_grammar::kSummaryHeader;
  head += '\n';
  if (prompt.substr(0, head.size()) != head) return std::nullopt;
  for (TaskKind task : {TaskKind::Anxiety, TaskKind::Depression}) {
    const std::string tail = "\n" + stage2_instruction(task);
    if (prompt.size() >= head.size() + tail.size() &&
        prompt.substr(prompt.size() - tail.size()) == tail)
      return std::string(prompt.substr(head.size(), prompt.size() - head.size() - tail.size()));
  }
  return std::nullopt;
}

}  // namespace semloop
