#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "semloop/eval.hpp"

using namespace semloop;
using semloop::testing::thrown_code;

namespace {

class Oracle : public Predictor {
 public:
  std::string name() const override { return "oracle"; }
  void fit(const Dataset& train, TaskKind task) override {
    task_ = task;
    seen_ = train.samples;
  }
  std::optional<Score> predict(const BehavioralWindow& w) const override {
    for (const auto& s : all_) if (s.window == w) return s.target(task_);
    return std::nullopt;
  }
  std::vector<LabeledSample> all_;
  std::vector<LabeledSample> seen_;

 private:
  TaskKind task_ = TaskKind::Anxiety;
};

Dataset synth(double slope = 8.0, std::uint64_t seed = 1) {
  SynthConfig c;
  c.subjects_per_subset = 4;
  c.weeks_per_subject = 3;
  c.signal_feature = semloop::testing::kSleepKey;
  c.signal_slope = slope;
  c.seed = seed;
  return gen_synthetic(c);
}

}  // namespace

TEST_CASE("mae") {
  CHECK(mae(std::vector<double>{0, 0, 0}) == 0.0);
  CHECK(mae(std::vector<double>{1, 1, 1}) == 1.0);
  CHECK(mae(std::vector<double>{0, 1, 2, 3}) == 1.5);
  CHECK(thrown_code([] { mae(std::vector<double>{}); }) == ErrorCode::EmptySet);
  CHECK(fold_mean_mae(std::vector<double>{1.0, 2.0}) == 1.5);
}

TEST_CASE("bootstrap standard error") {
  CHECK(bootstrap_se(std::vector<double>(10, 2.0), 5000, 1) == 0.0);
  const std::vector<double> e{0, 2};
  CHECK(bootstrap_se(e, 5000, 3) == bootstrap_se(e, 5000, 3));
  CHECK(std::abs(bootstrap_se(e, 5000, 3) - std::sqrt(0.5)) < 0.05);
  CHECK(thrown_code([] { bootstrap_se(std::vector<double>{}, 10, 1); }) == ErrorCode::EmptySet);
}

TEST_CASE("paired bootstrap") {
  Rng rng(4);
  std::vector<double> a(200), b(200);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = static_cast<double>(uniform_index(rng, 4));
    b[i] = a[i] + 10;
  }
  CHECK(paired_bootstrap(a, a, 5000, 1) == 1.0);
  CHECK(paired_bootstrap(b, a, 5000, 1) == 1.0);
  CHECK(paired_bootstrap(a, b, 5000, 1) == 0.0);
  CHECK(paired_bootstrap(a, b, 5000, 9) == paired_bootstrap(a, b, 5000, 9));
  CHECK(thrown_code([&] { paired_bootstrap(a, std::vector<double>{1.0}, 10, 1); }) == ErrorCode::LengthMismatch);
}

TEST_CASE("paired bootstrap on exchangeable errors is near one half") {
  Rng rng(8);
  std::vector<double> a(500), b(500);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = std::abs(standard_normal(rng));
    b[i] = std::abs(standard_normal(rng));
  }
  const double p = paired_bootstrap(a, b, 5000, 2);
  CHECK(p > 0.3);
  CHECK(p < 0.7);
}

TEST_CASE("significance stars") {
  CHECK(significance_stars(0.2).empty());
  CHECK(significance_stars(0.04) == "*");
  CHECK(significance_stars(0.009) == "**");
  CHECK(significance_stars(0.0005) == "***");
}

TEST_CASE("mean baseline") {
  Dataset d = synth();
  d.samples.resize(3);
  for (auto& s : d.samples) s.anxiety = Score{2};
  MeanBaseline m;
  m.fit(d, TaskKind::Anxiety);
  CHECK(m.predict(d.samples[0].window) == Score{2});
  d.samples.resize(2);
  d.samples[1].anxiety = Score{3};
  m.fit(d, TaskKind::Anxiety);
  CHECK(m.value() == Score{2});  // 2.5 rounds to even
  d.samples.clear();
  CHECK(thrown_code([&] { m.fit(d, TaskKind::Anxiety); }) == ErrorCode::EmptySet);
}

TEST_CASE("linear baseline beats the mean baseline on a monotone task") {
  const auto d = synth(8.0, 2);
  const auto folds = split_loso(d);
  MeanBaseline mean;
  LinearBaseline lin;
  std::vector<Predictor*> ps{&lin, &mean};
  const auto r = run_loso(d, folds, TaskKind::Anxiety, ps, {500, 1, 1});
  CHECK(r.method("linear-baseline").pooled.mae < r.method("mean-baseline").pooled.mae);
  CHECK_FALSE(lin.degenerate());
}

TEST_CASE("linear baseline falls back on a degenerate design") {
  Dataset d = synth();
  d.samples.resize(2);  // fewer rows than columns
  LinearBaseline lin;
  lin.fit(d, TaskKind::Anxiety);
  CHECK(lin.degenerate());
  MeanBaseline mean;
  mean.fit(d, TaskKind::Anxiety);
  CHECK(lin.predict(d.samples[0].window) == mean.value());
}

TEST_CASE("loso with constant labels and an oracle") {
  const auto constant = synth(0.0);
  MeanBaseline mean;
  std::vector<Predictor*> one{&mean};
  const auto folds = split_loso(constant);
  const auto r = run_loso(constant, folds, TaskKind::Anxiety, one, {200, 1, 1});
  REQUIRE(r.methods.size() == 1);
  CHECK(r.methods[0].folds.size() == 3);
  for (const auto& f : r.methods[0].folds) CHECK(f.mae == 0.0);

  const auto d = synth();
  Oracle oracle;
  oracle.all_ = d.samples;
  std::vector<Predictor*> o{&oracle};
  const auto ro = run_loso(d, split_loso(d), TaskKind::Anxiety, o, {200, 1, 1});
  CHECK(ro.methods[0].pooled.mae == 0.0);
  CHECK(ro.methods[0].pooled.se == 0.0);
}

TEST_CASE("predictors never see the held-out subset when fitting") {
  const auto d = synth();
  Oracle oracle;
  oracle.all_ = d.samples;
  std::vector<Predictor*> o{&oracle};
  const auto folds = split_loso(d);
  run_loso(d, std::span(folds).subspan(2, 1), TaskKind::Anxiety, o, {10, 1, 1});
  for (const auto& s : oracle.seen_) CHECK(s.subset != folds[2].name);
}

TEST_CASE("pooled mae is the sample-weighted fold mean and every sample appears once") {
  const auto d = synth(8.0, 5);
  MeanBaseline mean;
  LinearBaseline lin;
  std::vector<Predictor*> ps{&mean, &lin};
  const auto r = run_loso(d, split_loso(d), TaskKind::Depression, ps, {300, 4, 2});
  for (const auto& m : r.methods) {
    double weighted = 0;
    std::size_t n = 0;
    for (const auto& f : m.folds) {
      weighted += f.mae * static_cast<double>(f.n);
      n += f.n;
    }
    CHECK(std::abs(weighted / static_cast<double>(n) - m.pooled.mae) < 1e-12);
    std::vector<int> count(d.samples.size());
    for (const auto& p : m.predictions.items) count[p.sample_index]++;
    for (int c : count) CHECK(c == 1);
    CHECK(m.pooled.comparisons.size() == 1);
  }
  const auto again = run_loso(d, split_loso(d), TaskKind::Depression, ps, {300, 4, 1});
  CHECK(report_json(r, "h") == report_json(again, "h"));
}

TEST_CASE("report outputs") {
  const auto d = synth();
  MeanBaseline mean;
  LinearBaseline lin;
  std::vector<Predictor*> ps{&mean, &lin};
  const auto r = run_loso(d, split_loso(d), TaskKind::Anxiety, ps, {100, 1, 1});
  const auto j = report_json(r, "00ff");
  CHECK(j["task"] == "anxiety");
  CHECK(j["config_hash"] == "00ff");
  CHECK(j["folds"].size() == 3);
  CHECK(j["pooled"]["comparisons"].contains("linear-baseline"));
  std::ostringstream table, csv;
  write_report_table(j, table);
  CHECK(table.str().find("pooled") != std::string::npos);
  write_predictions_csv(r.methods[0], d, csv);
  std::istringstream in(csv.str());
  std::string line;
  std::getline(in, line);
  CHECK(line == "fold,subject_id,label_date,true,pred");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == d.samples.size());
}

TEST_CASE("duplicate predictor names are rejected") {
  const auto d = synth();
  MeanBaseline a, b;
  std::vector<Predictor*> ps{&a, &b};
  CHECK(thrown_code([&] { run_loso(d, split_loso(d), TaskKind::Anxiety, ps, {}); }) == ErrorCode::InvalidConfig);
}
