#pragma once

#include <functional>
#include <optional>
#include <string>

#include "semloop/data_model.hpp"
#include "semloop/error.hpp"
#include "semloop/ingest.hpp"

namespace semloop::testing {

// Code of the semloop::Error thrown by f, or nullopt if nothing was thrown.
template <typename F>
std::optional<ErrorCode> thrown_code(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline Date day(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y} / std::chrono::month{m} / std::chrono::day{d}};
}

inline FeatureSchema sleep_only_schema() {
  return FeatureSchema(SchemaName::Custom,
                       {{"sleep_duration", "Total sleep", "hours", Domain::Sleep, "Hours asleep."}});
}

// `len` consecutive days from `start`; value(i, key) gives each cell.
inline BehavioralWindow make_window(
    const FeatureSchema& s, const std::string& subject, Date start, std::size_t len,
    const std::function<std::optional<double>(std::size_t, const std::string&)>& value) {
  BehavioralWindow w{subject, {}};
  for (std::size_t i = 0; i < len; ++i) {
    DailyRecord r{subject, start + std::chrono::days{static_cast<int>(i)}, {}};
    for (const auto& f : s.features()) r.values[f.key] = value(i, f.key);
    w.days.push_back(std::move(r));
  }
  return w;
}

inline const std::string kSleepKey = "f_slp:fitbit_sleep_intraday_rapids_sumdurationasleepunifiedmain";

// The sufficient-template task used by the learning tests.
inline SynthConfig sufficient_task_config(std::uint64_t seed = 7) {
  SynthConfig c;
  c.subjects_per_subset = 12;
  c.weeks_per_subject = 8;
  c.signal_feature = kSleepKey;
  c.signal_lo = 240;
  c.signal_hi = 600;
  c.noise_scale = 0.0;
  c.shift_scale = 0.0;
  c.seed = seed;
  return c;
}

}  // namespace semloop::testing

#include "semloop/grpo.hpp"

namespace semloop::testing {

// Frozen rollouts from randomly initialized toy parameters on a small
// synthetic dataset, for gradient checks.
struct MiniInstance {
  ToyPolicyParams params;
  ToyPolicyParams ref;
  std::vector<RolloutGroup> groups;
};

inline MiniInstance mini_instance(std::uint64_t seed = 17, double beta_scale = 1.0) {
  SynthConfig sc;
  sc.subjects_per_subset = 2;
  sc.weeks_per_subject = 2;
  sc.subset_tags = {"A", "B"};
  sc.signal_feature = kSleepKey;
  sc.signal_lo = 240;
  sc.signal_hi = 600;
  sc.seed = seed;
  const Dataset d = gen_synthetic(sc);

  ToyConfig tc;
  tc.buckets = 3;
  tc.templates = 2;
  tc.signal_feature = kSleepKey;
  tc.range_lo = 240;
  tc.range_hi = 600;

  Rng rng(seed);
  auto random_params = [&] {
    auto p = ToyPolicyParams::uniform(tc.buckets, tc.templates);
    for (Eigen::Index i = 0; i < p.stage1_logits.size(); ++i) p.stage1_logits.data()[i] = beta_scale * standard_normal(rng);
    for (Eigen::Index i = 0; i < p.stage2_logits.size(); ++i) p.stage2_logits.data()[i] = beta_scale * standard_normal(rng);
    return p;
  };
  MiniInstance m{random_params(), random_params(), {}};
  ToyPolicy policy(d.schema, tc, m.params);
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    RolloutGroup g;
    g.trajectories = rollout_group(d.samples[i], i, TaskKind::Anxiety, d.schema, policy, {},
                                   {4, 1.0, 64, derive_seed(seed, i)});
    std::vector<double> r;
    for (const auto& t : g.trajectories) r.push_back(t.reward);
    g.advantages = normalize_advantages(r);
    m.groups.push_back(std::move(g));
  }
  return m;
}

}  // namespace semloop::testing
