#include "semloop/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "semloop/random.hpp"

namespace semloop {

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted)
    throw Error(ErrorCode::MalformedCsv, "unterminated quote on line " + std::to_string(line_no));
  out.push_back(std::move(cur));
  return out;
}

// Reads all non-blank rows; row 0 is the header.
std::vector<std::vector<std::string>> read_csv(std::istream& in, const char* what) {
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(split_csv_line(line, line_no));
  }
  if (rows.empty()) throw Error(ErrorCode::MalformedCsv, std::string(what) + " is empty");
  return rows;
}

Date require_date(const std::string& s, const char* what, std::size_t row) {
  auto d = parse_iso_date(s);
  if (!d)
    throw Error(ErrorCode::MalformedCsv, std::string(what) + " row " + std::to_string(row) +
                                             ": bad date '" + s + "'");
  return *d;
}

double parse_double(const std::string& s, std::size_t row) {
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || !std::isfinite(v))
    throw Error(ErrorCode::MalformedCsv,
                "features row " + std::to_string(row) + ": bad number '" + s + "'");
  return v;
}

int parse_label_int(const std::string& s, std::size_t row) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc{} || p != s.data() + s.size())
    throw Error(ErrorCode::MalformedCsv,
                "labels row " + std::to_string(row) + ": bad score '" + s + "'");
  if (v < Score::kMin || v > Score::kMax)
    throw Error(ErrorCode::LabelOutOfRange,
                "labels row " + std::to_string(row) + ": score " + s + " outside 0..6");
  return v;
}

std::string format_number(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void sort_samples(std::vector<LabeledSample>& samples) {
  std::sort(samples.begin(), samples.end(), [](const auto& a, const auto& b) {
    return std::tie(a.subset, a.window.subject_id, a.label_date) <
           std::tie(b.subset, b.window.subject_id, b.label_date);
  });
}

}  // namespace

std::vector<std::string> Dataset::subsets() const {
  std::set<std::string> tags;
  for (const auto& s : samples) tags.insert(s.subset);
  return {tags.begin(), tags.end()};
}

Dataset load_dataset(std::istream& features, std::istream& labels,
                     const FeatureSchema& schema, const LoadOptions& opts) {
  using Row = std::map<std::string, std::optional<double>>;

  const auto frows = read_csv(features, "features.csv");
  const auto& fheader = frows.front();
  if (fheader.size() < 2 || fheader[0] != "subject_id" || fheader[1] != "date")
    throw Error(ErrorCode::MalformedCsv, "features.csv header must start with subject_id,date");
  for (std::size_t c = 2; c < fheader.size(); ++c)
    if (!schema.contains(fheader[c]))
      throw Error(ErrorCode::UnknownFeatureColumn, "'" + fheader[c] + "'");

  std::map<std::pair<std::string, Date>, Row> daily;
  for (std::size_t r = 1; r < frows.size(); ++r) {
    const auto& row = frows[r];
    if (row.size() != fheader.size())
      throw Error(ErrorCode::MalformedCsv, "features row " + std::to_string(r) + " has " +
                                               std::to_string(row.size()) + " cells, expected " +
                                               std::to_string(fheader.size()));
    const Date date = require_date(row[1], "features", r);
    Row values;
    for (std::size_t c = 2; c < row.size(); ++c)
      values[fheader[c]] = row[c].empty() ? std::nullopt
                                          : std::optional<double>(parse_double(row[c], r));
    if (!daily.emplace(std::pair{row[0], date}, std::move(values)).second)
      throw Error(ErrorCode::MalformedCsv, "duplicate feature row for " + row[0] + " on " + row[1]);
  }

  const auto lrows = read_csv(labels, "labels.csv");
  const std::vector<std::string> expected{"subject_id", "date", "subset", "anxiety", "depression"};
  if (lrows.front() != expected)
    throw Error(ErrorCode::MalformedCsv,
                "labels.csv header must be subject_id,date,subset,anxiety,depression");

  Dataset out{schema, {}};
  std::set<std::tuple<std::string, Date, std::string>> seen;
  for (std::size_t r = 1; r < lrows.size(); ++r) {
    const auto& row = lrows[r];
    if (row.size() != expected.size())
      throw Error(ErrorCode::MalformedCsv, "labels row " + std::to_string(r) + " has " +
                                               std::to_string(row.size()) + " cells");
    const Date label_date = require_date(row[1], "labels", r);
    if (row[2].empty())
      throw Error(ErrorCode::MalformedCsv, "labels row " + std::to_string(r) + ": empty subset");
    const Score anxiety(parse_label_int(row[3], r));
    const Score depression(parse_label_int(row[4], r));
    if (!seen.emplace(row[0], label_date, row[2]).second)
      throw Error(ErrorCode::DuplicateLabelRow, row[0] + " " + row[1] + " " + row[2]);

    const Date last = opts.include_label_day ? label_date : label_date - std::chrono::days{1};
    const Date first = last - std::chrono::days{static_cast<int>(opts.window_len) - 1};
    BehavioralWindow w{row[0], {}};
    std::size_t covered = 0;
    for (Date d = first; d <= last; d += std::chrono::days{1}) {
      DailyRecord rec{row[0], d, {}};
      for (const auto& f : schema.features()) rec.values[f.key] = std::nullopt;
      if (auto it = daily.find({row[0], d}); it != daily.end()) {
        bool any = false;
        for (const auto& [k, v] : it->second) {
          rec.values[k] = v;
          any = any || v.has_value();
        }
        if (any) ++covered;
      }
      w.days.push_back(std::move(rec));
    }
    if (covered < opts.min_coverage) continue;
    validate_window(w, schema, opts.window_len);
    out.samples.push_back({std::move(w), label_date, row[2], anxiety, depression});
  }
  sort_samples(out.samples);
  return out;
}

Dataset load_dataset(const std::string& features_path, const std::string& labels_path,
                     const FeatureSchema& schema, const LoadOptions& opts) {
  std::ifstream f(features_path), l(labels_path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + features_path);
  if (!l) throw Error(ErrorCode::IoError, "cannot open " + labels_path);
  return load_dataset(f, l, schema, opts);
}

void write_dataset_csv(const Dataset& d, std::ostream& features, std::ostream& labels) {
  std::map<std::pair<std::string, Date>, const DailyRecord*> days;
  for (const auto& s : d.samples)
    for (const auto& rec : s.window.days) days.emplace(std::pair{rec.subject_id, rec.date}, &rec);

  features << "subject_id,date";
  for (const auto& f : d.schema.features()) features << ',' << f.key;
  features << '\n';
  for (const auto& [key, rec] : days) {
    features << key.first << ',' << format_iso_date(key.second);
    for (const auto& f : d.schema.features()) {
      features << ',';
      auto it = rec->values.find(f.key);
      if (it != rec->values.end() && it->second) features << format_number(*it->second);
    }
    features << '\n';
  }

  std::vector<const LabeledSample*> rows;
  for (const auto& s : d.samples) rows.push_back(&s);
  std::sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
    return std::tie(a->window.subject_id, a->label_date, a->subset) <
           std::tie(b->window.subject_id, b->label_date, b->subset);
  });
  labels << "subject_id,date,subset,anxiety,depression\n";
  for (const auto* s : rows)
    labels << s->window.subject_id << ',' << format_iso_date(s->label_date) << ',' << s->subset
           << ',' << s->anxiety.value() << ',' << s->depression.value() << '\n';
}

void write_dataset_csv(const Dataset& d, const std::string& features_path,
                       const std::string& labels_path) {
  std::ofstream f(features_path), l(labels_path);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + features_path);
  if (!l) throw Error(ErrorCode::IoError, "cannot write " + labels_path);
  write_dataset_csv(d, f, l);
  if (!f || !l) throw Error(ErrorCode::IoError, "write failed");
}

std::vector<Fold> split_loso(const Dataset& d) {
  const auto tags = d.subsets();
  if (tags.size() < 2)
    throw Error(ErrorCode::SingleSubset,
                "need at least two subsets, found " + std::to_string(tags.size()));
  std::vector<Fold> folds;
  for (const auto& tag : tags) {
    Fold f{tag, {}, {}};
    for (std::size_t i = 0; i < d.samples.size(); ++i)
      (d.samples[i].subset == tag ? f.test : f.train).push_back(i);
    folds.push_back(std::move(f));
  }
  return folds;
}

namespace {

struct Nominal {
  double center, spread, lo, hi;
  bool integral;
};

Nominal nominal_for_unit(const std::string& unit) {
  constexpr double kInf = 1e12;
  if (unit == "minutes") return {180, 60, 0, 1440, false};
  if (unit == "hours") return {4, 1.5, 0, 24, false};
  if (unit == "count") return {20, 8, 0, kInf, true};
  if (unit.rfind("ratio", 0) == 0 || unit.rfind("index", 0) == 0) return {0.5, 0.15, 0, 1, false};
  if (unit == "meters") return {3000, 1200, 0, kInf, false};
  if (unit == "seconds") return {7200, 2400, 0, 86400, false};
  if (unit == "8-min bins") return {40, 10, 0, 180, true};
  return {10, 3, 0, kInf, false};
}

double round_cents(double v) { return std::round(v * 100.0) / 100.0; }

void validate_synth(const SynthConfig& cfg) {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (!cfg.schema.contains(cfg.signal_feature))
    bad("signal_feature '" + cfg.signal_feature + "' not in schema");
  if (cfg.subset_tags.empty()) bad("subset_tags is empty");
  std::set<std::string> tags(cfg.subset_tags.begin(), cfg.subset_tags.end());
  if (tags.size() != cfg.subset_tags.size()) bad("subset_tags are not distinct");
  for (const auto& t : cfg.subset_tags)
    if (t.empty() || t.find_first_of(",\"\n") != std::string::npos) bad("bad subset tag '" + t + "'");
  if (cfg.subjects_per_subset == 0) bad("subjects_per_subset must be >= 1");
  if (cfg.weeks_per_subject == 0) bad("weeks_per_subject must be >= 1");
  if (cfg.window_len == 0) bad("window_len must be >= 1");
  if (!(cfg.noise_scale >= 0.0)) bad("noise_scale must be >= 0");
  if (!(cfg.missing_rate >= 0.0 && cfg.missing_rate < 1.0)) bad("missing_rate must be in [0,1)");
  if (!(cfg.shift_scale >= 0.0 && cfg.shift_scale < 1.0)) bad("shift_scale must be in [0,1)");
  if (!std::isfinite(cfg.signal_slope) || !std::isfinite(cfg.signal_intercept))
    bad("signal_slope/signal_intercept must be finite");
  auto [lo, hi] = synth_signal_range(cfg);
  if (!(hi > lo)) bad("signal range must satisfy lo < hi");
}

}  // namespace

std::pair<double, double> synth_signal_range(const SynthConfig& cfg) {
  if (std::isfinite(cfg.signal_lo) && std::isfinite(cfg.signal_hi))
    return {cfg.signal_lo, cfg.signal_hi};
  const auto& spec = cfg.schema.at(cfg.signal_feature);
  const Nominal n = nominal_for_unit(spec.unit);
  return {std::max(n.lo, n.center - 2.5 * n.spread), std::min(n.hi, n.center + 2.5 * n.spread)};
}

Dataset gen_synthetic(const SynthConfig& cfg) {
  validate_synth(cfg);
  const auto [sig_lo, sig_hi] = synth_signal_range(cfg);
  const std::size_t n_days = cfg.window_len + 7 * (cfg.weeks_per_subject - 1);
  const std::size_t n_subsets = cfg.subset_tags.size();
  const auto& features = cfg.schema.features();

  Dataset out{cfg.schema, {}};
  for (std::size_t si = 0; si < n_subsets; ++si) {
    const double scale =
        n_subsets > 1
            ? 1.0 + cfg.shift_scale * (2.0 * static_cast<double>(si) /
                                           static_cast<double>(n_subsets - 1) -
                                       1.0)
            : 1.0;
    const Date start = cfg.start_date + std::chrono::days{364 * static_cast<int>(si)};

    for (std::size_t sj = 0; sj < cfg.subjects_per_subset; ++sj) {
      Rng rng(derive_seed(cfg.seed, si, sj));
      char id[32];
      std::snprintf(id, sizeof id, "-s%03zu", sj + 1);
      const std::string subject = cfg.subset_tags[si] + id;

      // Latent signal level in [0, 1]: a subject baseline plus a slow oscillation.
      const double base = uniform01(rng);
      const double period = 10.0 + 20.0 * uniform01(rng);
      const double phase = 2.0 * std::numbers::pi * uniform01(rng);
      std::vector<double> offsets(features.size());
      for (auto& o : offsets) o = standard_normal(rng);

      std::vector<double> latent_signal(n_days);  // pre-shift signal values
      std::vector<DailyRecord> days;
      days.reserve(n_days);
      for (std::size_t d = 0; d < n_days; ++d) {
        const double level = std::clamp(
            base + 0.2 * std::sin(2.0 * std::numbers::pi * static_cast<double>(d) / period + phase) +
                0.05 * standard_normal(rng),
            0.0, 1.0);
        DailyRecord rec{subject, start + std::chrono::days{static_cast<int>(d)}, {}};
        for (std::size_t f = 0; f < features.size(); ++f) {
          const auto& spec = features[f];
          const Nominal nom = nominal_for_unit(spec.unit);
          double raw;
          if (spec.key == cfg.signal_feature) {
            raw = round_cents(sig_lo + (sig_hi - sig_lo) * level);
            latent_signal[d] = raw;
          } else {
            raw = nom.center + nom.spread * (0.5 * offsets[f] + standard_normal(rng));
            if (uniform01(rng) < cfg.missing_rate) {
              rec.values[spec.key] = std::nullopt;
              continue;
            }
          }
          double observed = std::clamp(raw * scale, nom.lo, nom.hi);
          observed = nom.integral ? std::round(observed) : round_cents(observed);
          rec.values[spec.key] = observed;
        }
        days.push_back(std::move(rec));
      }

      for (std::size_t w = 0; w < cfg.weeks_per_subject; ++w) {
        const std::size_t first = 7 * w;
        BehavioralWindow win{subject, {days.begin() + static_cast<std::ptrdiff_t>(first),
                                       days.begin() + static_cast<std::ptrdiff_t>(first + cfg.window_len)}};
        double mean = 0.0;
        for (std::size_t d = first; d < first + cfg.window_len; ++d) mean += latent_signal[d];
        mean /= static_cast<double>(cfg.window_len);
        const double norm = (mean - sig_lo) / (sig_hi - sig_lo);
        auto draw_label = [&](double noise) {
          const double z = cfg.signal_slope * (norm - 0.5) + cfg.signal_intercept + noise;
          const double y = 6.0 / (1.0 + std::exp(-z));
          return Score(static_cast<int>(std::clamp(std::nearbyint(y), 0.0, 6.0)));
        };
        const Score anxiety = draw_label(cfg.noise_scale * standard_normal(rng));
        const Score depression = draw_label(cfg.noise_scale * standard_normal(rng));
        const Date label_date = win.days.back().date + std::chrono::days{1};
        out.samples.push_back({std::move(win), label_date, cfg.subset_tags[si], anxiety, depression});
      }
    }
  }
  sort_samples(out.samples);
  return out;
}

}  // namespace semloop
