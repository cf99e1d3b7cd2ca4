#pragma once

// Feature/label table loading, 14-day window assembly, leave-one-subset-out
// folds and the schema-faithful synthetic generator.

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "semloop/data_model.hpp"

namespace semloop {

struct Dataset {
  FeatureSchema schema;
  std::vector<LabeledSample> samples;  // sorted by (subset, subject_id, label_date)

  // Distinct subset tags in sorted order.
  std::vector<std::string> subsets() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct LoadOptions {
  std::size_t window_len = kDefaultWindowLength;
  // Minimum number of days in the window with at least one recorded value.
  std::size_t min_coverage = 10;
  // false: window is the `window_len` days before the label date.
  // true: window ends on the label date itself.
  bool include_label_day = false;
};

// features.csv: subject_id,date,<feature_key>...   (empty cell = missing)
// labels.csv:   subject_id,date,subset,anxiety,depression
Dataset load_dataset(const std::string& features_path, const std::string& labels_path,
                     const FeatureSchema& schema, const LoadOptions& opts = {});
Dataset load_dataset(std::istream& features, std::istream& labels,
                     const FeatureSchema& schema, const LoadOptions& opts = {});

// Writes the daily rows referenced by the dataset's windows and its labels.
void write_dataset_csv(const Dataset& d, const std::string& features_path,
                       const std::string& labels_path);
void write_dataset_csv(const Dataset& d, std::ostream& features, std::ostream& labels);

struct Fold {
  std::string name;  // held-out subset tag
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// One fold per subset tag; throws SingleSubset with fewer than two tags.
std::vector<Fold> split_loso(const Dataset& d);

struct SynthConfig {
  FeatureSchema schema = builtin_schema(SchemaName::GLOBEM);
  std::size_t subjects_per_subset = 10;
  std::size_t weeks_per_subject = 8;
  std::vector<std::string> subset_tags{"DS2", "DS3", "DS4"};
  std::string signal_feature;
  double noise_scale = 0.0;
  std::uint64_t seed = 0;

  // Label rule: y = clamp(round(6 * sigmoid(z))), with
  // z = slope * (normalized window mean of the signal - 0.5) + intercept + noise.
  double signal_slope = 8.0;
  double signal_intercept = 0.0;
  // Range the signal's latent level maps onto; NaN picks a unit-based default.
  double signal_lo = std::numeric_limits<double>::quiet_NaN();
  double signal_hi = std::numeric_limits<double>::quiet_NaN();
  // Subset i of S rescales every feature by 1 + shift_scale * (2i/(S-1) - 1).
  double shift_scale = 0.05;
  // Per-cell missing probability for non-signal features.
  double missing_rate = 0.0;
  Date start_date = Date{std::chrono::year{2020} / 1 / 6};
  std::size_t window_len = kDefaultWindowLength;
};

// Resolved [lo, hi) of the signal feature for a config (applies defaults).
std::pair<double, double> synth_signal_range(const SynthConfig& cfg);

// Deterministic in cfg. Throws InvalidConfig on bad configs.
Dataset gen_synthetic(const SynthConfig& cfg);

}  // namespace semloop
