#include "semloop/data_model.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace semloop {

namespace {

bool parse_fixed_digits(std::string_view s, int& out) {
  if (s.empty()) return false;
  for (char c : s)
    if (c < '0' || c > '9') return false;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

}  // namespace

std::optional<Date> parse_iso_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  int y = 0, m = 0, d = 0;
  if (!parse_fixed_digits(text.substr(0, 4), y) ||
      !parse_fixed_digits(text.substr(5, 2), m) ||
      !parse_fixed_digits(text.substr(8, 2), d))
    return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y},
                                        std::chrono::month{static_cast<unsigned>(m)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return Date{ymd};
}

std::string format_iso_date(Date d) {
  const std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

Score::Score(int value) : value_(value) {
  if (value < kMin || value > kMax)
    throw Error(ErrorCode::InvalidScore,
                "score " + std::to_string(value) + " outside 0..6");
}

Score Score::parse(std::string_view text) {
  int v = 0;
  if (text.size() > 3 || !parse_fixed_digits(text, v))
    throw Error(ErrorCode::InvalidScore, "not an integer score: '" + std::string(text) + "'");
  return Score(v);
}

std::string_view task_name(TaskKind task) {
  return task == TaskKind::Anxiety ? "anxiety" : "depression";
}

TaskKind parse_task(std::string_view name) {
  if (name == "anxiety") return TaskKind::Anxiety;
  if (name == "depression") return TaskKind::Depression;
  throw Error(ErrorCode::UnknownName, "task '" + std::string(name) + "'");
}

std::string_view domain_name(Domain d) {
  switch (d) {
    case Domain::Sleep: return "Sleep";
    case Domain::Mobility: return "Mobility";
    case Domain::Activity: return "Activity";
    case Domain::PhoneUse: return "PhoneUse";
    case Domain::Communication: return "Communication";
  }
  return "Sleep";
}

Domain parse_domain(std::string_view name) {
  for (Domain d : {Domain::Sleep, Domain::Mobility, Domain::Activity,
                   Domain::PhoneUse, Domain::Communication})
    if (domain_name(d) == name) return d;
  throw Error(ErrorCode::UnknownName, "domain '" + std::string(name) + "'");
}

std::string_view schema_name_string(SchemaName n) {
  switch (n) {
    case SchemaName::GLOBEM: return "GLOBEM";
    case SchemaName::CollegeExperience: return "CollegeExperience";
    case SchemaName::Custom: return "Custom";
  }
  return "Custom";
}

FeatureSchema::FeatureSchema(SchemaName name, std::vector<FeatureSpec> features)
    : name_(name), features_(std::move(features)) {
  if (features_.empty()) throw Error(ErrorCode::InvalidSchema, "schema has no features");
  std::set<std::string_view> seen;
  for (const auto& f : features_) {
    if (f.key.empty()) throw Error(ErrorCode::InvalidSchema, "empty feature key");
    if (f.unit.empty()) throw Error(ErrorCode::InvalidSchema, "empty unit for '" + f.key + "'");
    if (!seen.insert(f.key).second)
      throw Error(ErrorCode::InvalidSchema, "duplicate feature key '" + f.key + "'");
  }
}

std::optional<std::size_t> FeatureSchema::index_of(std::string_view key) const {
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (features_[i].key == key) return i;
  return std::nullopt;
}

const FeatureSpec& FeatureSchema::at(std::string_view key) const {
  if (auto i = index_of(key)) return features_[*i];
  throw Error(ErrorCode::UnknownFeatureKey, "'" + std::string(key) + "'");
}

namespace {

FeatureSchema make_globem() {
  using D = Domain;
  return FeatureSchema(
      SchemaName::GLOBEM,
      {
          {"f_slp:fitbit_sleep_intraday_rapids_sumdurationasleepunifiedmain",
           "Time asleep (main sleep)", "minutes", D::Sleep,
           "Total time asleep during the main sleep period; sleep quantity."},
          {"f_slp:fitbit_sleep_intraday_rapids_ratiodurationasleepunifiedwithinmain",
           "Sleep efficiency", "ratio (0-1)", D::Sleep,
           "Proportion of time in bed actually asleep; sleep efficiency."},
          {"f_loc:phone_locations_doryab_timeathome", "Time at home", "minutes",
           D::Mobility, "Time spent at the inferred home location; stay-at-home behavior."},
          {"f_loc:phone_locations_doryab_numberofsignificantplaces",
           "Significant places visited", "count", D::Mobility,
           "Number of unique significant locations visited; life-space breadth."},
          {"f_loc:phone_locations_locmap_duration_in_locmap_greens",
           "Time in green spaces", "minutes", D::Mobility,
           "Time spent in green spaces or parks; restorative out-of-home context."},
          {"f_loc:phone_locations_barnett_circdnrtn", "Routine deviation",
           "index (0-1)", D::Mobility,
           "Deviation of the daily mobility pattern from the user's norm; routine consistency."},
          {"f_steps:fitbit_steps_intraday_rapids_sumsteps", "Daily steps", "count",
           D::Activity, "Total daily step count; overall movement volume."},
          {"f_steps:fitbit_steps_intraday_rapids_avgdurationactivebout",
           "Average active bout length", "minutes", D::Activity,
           "Average length of sustained active bouts; intentional activity vs. incidental motion."},
          {"f_screen:phone_screen_rapids_countepisodeunlock", "Phone unlocks", "count",
           D::PhoneUse, "Number of phone unlock episodes; device-checking frequency."},
          {"f_screen:phone_screen_rapids_firstuseafter00unlock",
           "First phone use after midnight", "minutes", D::PhoneUse,
           "Minutes after midnight until the first unlock; morning-activation timing."},
          {"f_call:phone_calls_rapids_outgoing_sumduration", "Outgoing call time",
           "minutes", D::Communication,
           "Total outgoing call duration; active social initiative."},
          {"f_blue:phone_bluetooth_doryab_uniquedevicesothers",
           "Nearby Bluetooth devices", "count", D::Communication,
           "Unique nearby Bluetooth devices; ambient social density."},
      });
}

FeatureSchema make_college() {
  using D = Domain;
  return FeatureSchema(
      SchemaName::CollegeExperience,
      {
          {"sleep_duration", "Total sleep", "hours", D::Sleep,
           "Estimated total time asleep for the day; sleep quantity."},
          {"sleep_start", "Sleep onset", "8-min bins", D::Sleep,
           "Sleep onset time as offset from 8:00 PM; bedtime regularity."},
          {"sleep_end", "Wake time", "8-min bins", D::Sleep,
           "Wake time as offset from 8:00 PM; morning-activation timing."},
          {"loc_home_dur", "Time at home", "hours", D::Mobility,
           "Time spent at the inferred home location; stay-at-home behavior."},
          {"loc_visit_num_ep_0", "Locations visited", "count", D::Mobility,
           "Number of distinct locations visited; life-space breadth."},
          {"loc_dist_ep_0", "Distance traveled", "meters", D::Mobility,
           "Total distance traveled; overall mobility volume."},
          {"loc_social_dur", "Time at social places", "hours", D::Mobility,
           "Time at social locations; in-person social engagement."},
          {"loc_study_dur", "Time at study places", "hours", D::Mobility,
           "Time at study locations such as libraries; academic engagement."},
          {"loc_leisure_dur", "Time at leisure places", "hours", D::Mobility,
           "Time at leisure locations such as parks or shops; restorative context."},
          {"loc_food_dur", "Time at food places", "hours", D::Mobility,
           "Time at food locations; routine eating context."},
          {"loc_workout_dur", "Time at workout places", "hours", D::Mobility,
           "Time at workout locations such as gyms; intentional activity."},
          {"act_still_ep_0", "Stationary time", "seconds", D::Activity,
           "Total stationary duration; physical inactivity."},
          {"act_walking_ep_0", "Walking time", "seconds", D::Activity,
           "Total walking duration; everyday movement volume."},
          {"unlock_num_ep_0", "Phone unlocks", "count", D::PhoneUse,
           "Number of phone unlock events; device-checking frequency."},
          {"unlock_duration_ep_0", "Phone unlocked time", "seconds", D::PhoneUse,
           "Total time the phone was in the unlocked state; overall device engagement."},
      });
}

}  // namespace

FeatureSchema builtin_schema(SchemaName name) {
  switch (name) {
    case SchemaName::GLOBEM: return make_globem();
    case SchemaName::CollegeExperience: return make_college();
    case SchemaName::Custom: break;
  }
  throw Error(ErrorCode::UnknownName, "no built-in schema for 'Custom'");
}

FeatureSchema builtin_schema(std::string_view name) {
  if (name == "GLOBEM") return builtin_schema(SchemaName::GLOBEM);
  if (name == "CollegeExperience") return builtin_schema(SchemaName::CollegeExperience);
  throw Error(ErrorCode::UnknownName, "schema '" + std::string(name) + "'");
}

FeatureSchema parse_schema_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSchema, e.what());
  }
  try {
    std::vector<FeatureSpec> features;
    for (const auto& f : j.at("features")) {
      features.push_back({f.at("key").get<std::string>(), f.at("label").get<std::string>(),
                          f.at("unit").get<std::string>(),
                          parse_domain(f.at("domain").get<std::string>()),
                          f.value("description", std::string{})});
    }
    const auto name = j.value("name", std::string{"Custom"});
    SchemaName sn = SchemaName::Custom;
    if (name == "GLOBEM") sn = SchemaName::GLOBEM;
    if (name == "CollegeExperience") sn = SchemaName::CollegeExperience;
    return FeatureSchema(sn, std::move(features));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidSchema, e.what());
  }
}

FeatureSchema load_schema_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open schema file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_schema_json(ss.str());
}

void validate_window(const BehavioralWindow& w, const FeatureSchema& s,
                     std::size_t expected_length) {
  if (w.days.size() != expected_length)
    throw Error(ErrorCode::WrongLength, "window has " + std::to_string(w.days.size()) +
                                            " days, expected " + std::to_string(expected_length));
  for (std::size_t i = 0; i < w.days.size(); ++i) {
    const auto& day = w.days[i];
    if (day.subject_id != w.subject_id)
      throw Error(ErrorCode::MixedSubjects, "day " + std::to_string(i + 1) + " belongs to '" +
                                                day.subject_id + "', window to '" +
                                                w.subject_id + "'");
    if (i > 0 && day.date != w.days[i - 1].date + std::chrono::days{1})
      throw Error(ErrorCode::NonConsecutiveDates,
                  format_iso_date(w.days[i - 1].date) + " -> " + format_iso_date(day.date));
    for (const auto& [key, _] : day.values)
      if (!s.contains(key)) throw Error(ErrorCode::UnknownFeatureKey, "'" + key + "'");
  }
}

}  // namespace semloop
