#pragma once

// Feature vocabulary, behavioral windows and PHQ-4 subscores shared by the
// rest of the library. All types are plain values, immutable once built.

#include <chrono>
#include <compare>
#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "semloop/error.hpp"

namespace semloop {

using Date = std::chrono::sys_days;

// Parses a strict ISO-8601 calendar date `YYYY-MM-DD`.
std::optional<Date> parse_iso_date(std::string_view text);
std::string format_iso_date(Date d);

// PHQ-4 anxiety (GAD-2) or depression (PHQ-2) subscore, 0..6.
class Score {
 public:
  static constexpr int kMin = 0;
  static constexpr int kMax = 6;
  static constexpr int kLevels = kMax - kMin + 1;

  explicit Score(int value);

  int value() const noexcept { return value_; }
  std::string to_string() const { return std::to_string(value_); }
  // Accepts a bare decimal integer in range; anything else throws InvalidScore.
  static Score parse(std::string_view text);

  friend auto operator<=>(const Score&, const Score&) = default;

 private:
  int value_;
};

enum class TaskKind { Anxiety, Depression };

std::string_view task_name(TaskKind task);  // "anxiety" / "depression"
TaskKind parse_task(std::string_view name);

enum class Domain { Sleep, Mobility, Activity, PhoneUse, Communication };

std::string_view domain_name(Domain d);
Domain parse_domain(std::string_view name);

struct FeatureSpec {
  std::string key;
  std::string label;
  std::string unit;
  Domain domain = Domain::Sleep;
  std::string description;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

enum class SchemaName { GLOBEM, CollegeExperience, Custom };

std::string_view schema_name_string(SchemaName n);

class FeatureSchema {
 public:
  // Throws InvalidSchema when empty, a key/unit is empty, or keys repeat.
  FeatureSchema(SchemaName name, std::vector<FeatureSpec> features);

  SchemaName name() const noexcept { return name_; }
  const std::vector<FeatureSpec>& features() const noexcept { return features_; }
  std::size_t size() const noexcept { return features_.size(); }

  bool contains(std::string_view key) const { return index_of(key).has_value(); }
  std::optional<std::size_t> index_of(std::string_view key) const;
  const FeatureSpec& at(std::string_view key) const;

  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;

 private:
  SchemaName name_;
  std::vector<FeatureSpec> features_;
};

// Built-in sensing vocabularies ("GLOBEM", "CollegeExperience").
FeatureSchema builtin_schema(std::string_view name);
FeatureSchema builtin_schema(SchemaName name);

// Custom schema file:
//   { "name": str, "features": [ {key, label, unit, domain, description} ] }
FeatureSchema load_schema_file(const std::string& path);
FeatureSchema parse_schema_json(std::string_view json_text);

struct DailyRecord {
  std::string subject_id;
  Date date;
  std::map<std::string, std::optional<double>> values;

  friend bool operator==(const DailyRecord&, const DailyRecord&) = default;
};

inline constexpr std::size_t kDefaultWindowLength = 14;

struct BehavioralWindow {
  std::string subject_id;
  std::vector<DailyRecord> days;  // oldest first

  friend bool operator==(const BehavioralWindow&, const BehavioralWindow&) = default;
};

struct LabeledSample {
  BehavioralWindow window;
  Date label_date;
  std::string subset;
  Score anxiety{0};
  Score depression{0};

  Score target(TaskKind task) const {
    return task == TaskKind::Anxiety ? anxiety : depression;
  }

  friend bool operator==(const LabeledSample&, const LabeledSample&) = default;
};

// Checks window length, date contiguity, single subject and key membership.
void validate_window(const BehavioralWindow& w, const FeatureSchema& s,
                     std::size_t expected_length = kDefaultWindowLength);

}  // namespace semloop
