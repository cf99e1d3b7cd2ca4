#include "semloop/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include <Eigen/QR>

#include "semloop/random.hpp"

namespace semloop {

namespace {

Score round_to_score(double v) {
  const double r = std::nearbyint(v);  // default rounding mode: half to even
  return Score{static_cast<int>(std::clamp(r, double{Score::kMin}, double{Score::kMax}))};
}

double window_feature_mean(const BehavioralWindow& w, const std::string& key, bool& any) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& day : w.days) {
    auto it = day.values.find(key);
    if (it != day.values.end() && it->second) {
      sum += *it->second;
      ++n;
    }
  }
  any = n > 0;
  return n > 0 ? sum / static_cast<double>(n) : 0.0;
}

}  // namespace

void MeanBaseline::fit(const Dataset& train, TaskKind task) {
  if (train.samples.empty()) throw Error(ErrorCode::EmptySet, "mean baseline: empty train split");
  double sum = 0.0;
  for (const auto& s : train.samples) sum += s.target(task).value();
  value_ = round_to_score(sum / static_cast<double>(train.samples.size()));
}

Eigen::VectorXd LinearBaseline::features(const BehavioralWindow& w) const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(keys_.size()));
  for (std::size_t j = 0; j < keys_.size(); ++j) {
    bool any = false;
    const double m = window_feature_mean(w, keys_[j], any);
    x[static_cast<Eigen::Index>(j)] = any ? m : impute_[static_cast<Eigen::Index>(j)];
  }
  return x;
}

void LinearBaseline::fit(const Dataset& train, TaskKind task) {
  if (train.samples.empty()) throw Error(ErrorCode::EmptySet, "linear baseline: empty train split");
  keys_.clear();
  for (const auto& f : train.schema.features()) keys_.push_back(f.key);
  const auto n = static_cast<Eigen::Index>(train.samples.size());
  const auto p = static_cast<Eigen::Index>(keys_.size());

  Eigen::MatrixXd raw(n, p);
  Eigen::MatrixXd seen = Eigen::MatrixXd::Zero(n, p);
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& s = train.samples[static_cast<std::size_t>(i)];
    y[i] = s.target(task).value();
    for (Eigen::Index j = 0; j < p; ++j) {
      bool any = false;
      raw(i, j) = window_feature_mean(s.window, keys_[static_cast<std::size_t>(j)], any);
      seen(i, j) = any ? 1.0 : 0.0;
    }
  }
  impute_ = Eigen::VectorXd::Zero(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double cnt = seen.col(j).sum();
    if (cnt > 0) impute_[j] = raw.col(j).cwiseProduct(seen.col(j)).sum() / cnt;
    for (Eigen::Index i = 0; i < n; ++i)
      if (seen(i, j) == 0.0) raw(i, j) = impute_[j];
  }

  kept_.clear();
  for (Eigen::Index j = 0; j < p; ++j)
    if (raw.col(j).maxCoeff() - raw.col(j).minCoeff() > 0.0) kept_.push_back(j);

  MeanBaseline mean;
  mean.fit(train, task);
  Eigen::MatrixXd X(n, static_cast<Eigen::Index>(kept_.size()) + 1);
  X.col(0).setOnes();
  for (std::size_t c = 0; c < kept_.size(); ++c) X.col(static_cast<Eigen::Index>(c) + 1) = raw.col(kept_[c]);

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  if (qr.rank() < X.cols()) {
    fallback_ = mean.value();
    coef_.resize(0);
    return;
  }
  fallback_.reset();
  coef_ = qr.solve(y);
}

std::optional<Score> LinearBaseline::predict(const BehavioralWindow& window) const {
  if (fallback_) return fallback_;
  if (coef_.size() == 0) throw Error(ErrorCode::InvalidConfig, "linear baseline used before fit");
  const auto x = features(window);
  double v = coef_[0];
  for (std::size_t c = 0; c < kept_.size(); ++c) v += coef_[static_cast<Eigen::Index>(c) + 1] * x[kept_[c]];
  return round_to_score(v);
}

ToyPredictor::ToyPredictor(ToyConfig toy, ToyPolicyParams fixed)
    : toy_(std::move(toy)), fixed_(std::move(fixed)) {
  fixed_->validate();
}

ToyPredictor::ToyPredictor(ToyConfig toy, TrainConfig train, RewardSpec spec)
    : toy_(std::move(toy)), train_(train), spec_(spec) {
  train_.validate();
}

void ToyPredictor::fit(const Dataset& train, TaskKind task) {
  task_ = task;
  if (fixed_) {
    policy_ = std::make_unique<ToyPolicy>(train.schema, toy_, *fixed_);
    return;
  }
  policy_ = std::make_unique<ToyPolicy>(train.schema, toy_);
  semloop::train(train, task, train_, spec_, *policy_);
}

std::optional<Score> ToyPredictor::predict(const BehavioralWindow& window) const {
  if (!policy_) throw Error(ErrorCode::InvalidConfig, "toy predictor used before fit");
  const auto r = infer_once(*policy_, window, policy_->schema(), task_, 0.0, train_.max_tokens, 0);
  if (!r.prediction) return std::nullopt;
  return r.prediction.value();
}

ProviderPredictor::ProviderPredictor(Provider& provider, double temperature, std::size_t max_tokens,
                                     std::optional<std::uint64_t> seed)
    : provider_(provider), temperature_(temperature), max_tokens_(max_tokens), seed_(seed) {}

void ProviderPredictor::fit(const Dataset& train, TaskKind task) {
  schema_ = train.schema;
  task_ = task;
}

std::optional<Score> ProviderPredictor::predict(const BehavioralWindow& window) const {
  try {
    const auto r = infer_once(provider_, window, schema_, task_, temperature_, max_tokens_, seed_);
    if (!r.prediction) return std::nullopt;
    return r.prediction.value();
  } catch (const Error&) {
    return std::nullopt;
  }
}

double mae(std::span<const double> abs_errors) {
  if (abs_errors.empty()) throw Error(ErrorCode::EmptySet, "mae of an empty set");
  return std::accumulate(abs_errors.begin(), abs_errors.end(), 0.0) /
         static_cast<double>(abs_errors.size());
}

namespace {

std::vector<double> abs_errors(std::span<const Prediction> items) {
  std::vector<double> e;
  e.reserve(items.size());
  for (const auto& p : items)
    if (p.pred) e.push_back(std::abs(p.pred->value() - p.truth.value()));
  return e;
}

}  // namespace

double mae(const PredictionSet& preds) { return mae(abs_errors(preds.items)); }

double fold_mean_mae(std::span<const double> fold_maes) { return mae(fold_maes); }

double bootstrap_se(std::span<const double> abs_errors, std::size_t B, std::uint64_t seed) {
  if (abs_errors.empty()) throw Error(ErrorCode::EmptySet, "bootstrap of an empty set");
  if (B < 1) throw Error(ErrorCode::InvalidConfig, "bootstrap needs B >= 1");
  Rng rng(seed);
  const std::size_t n = abs_errors.size();
  std::vector<double> means(B);
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += abs_errors[uniform_index(rng, n)];
    m = s / static_cast<double>(n);
  }
  const double mu = std::accumulate(means.begin(), means.end(), 0.0) / static_cast<double>(B);
  double ss = 0.0;
  for (double m : means) ss += (m - mu) * (m - mu);
  return std::sqrt(ss / static_cast<double>(B));
}

double paired_bootstrap(std::span<const double> err_a, std::span<const double> err_b,
                        std::size_t B, std::uint64_t seed) {
  if (err_a.size() != err_b.size())
    throw Error(ErrorCode::LengthMismatch, std::to_string(err_a.size()) + " vs " +
                                               std::to_string(err_b.size()) + " errors");
  if (err_a.empty()) throw Error(ErrorCode::EmptySet, "paired bootstrap of an empty set");
  if (B < 1) throw Error(ErrorCode::InvalidConfig, "bootstrap needs B >= 1");
  const std::size_t n = err_a.size();
  // Errors are small integers in practice, so sums of differences are exact
  // and ties are detected exactly.
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = err_a[i] - err_b[i];
  Rng rng(seed);
  std::size_t worse = 0;
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += d[uniform_index(rng, n)];
    if (s >= 0.0) ++worse;
  }
  return static_cast<double>(worse) / static_cast<double>(B);
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

const MethodReport& LosoReport::method(std::string_view name) const {
  for (const auto& m : methods)
    if (m.predictions.method == name) return m;
  throw Error(ErrorCode::UnknownName, "no method '" + std::string(name) + "' in report");
}

Dataset subset_of(const Dataset& d, std::span<const std::size_t> indices) {
  Dataset out{d.schema, {}};
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(d.samples.at(i));
  return out;
}

namespace {

// Errors of both methods on the samples both predicted, aligned by position.
std::pair<std::vector<double>, std::vector<double>> paired_errors(std::span<const Prediction> a,
                                                                  std::span<const Prediction> b) {
  std::pair<std::vector<double>, std::vector<double>> out;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].pred || !b[i].pred) continue;
    out.first.push_back(std::abs(a[i].pred->value() - a[i].truth.value()));
    out.second.push_back(std::abs(b[i].pred->value() - b[i].truth.value()));
  }
  return out;
}

FoldReport summarize(const std::string& fold, std::span<const Prediction> items, std::size_t B,
                     std::uint64_t seed) {
  FoldReport r;
  r.fold = fold;
  r.n = items.size();
  const auto e = abs_errors(items);
  r.missing = r.n - e.size();
  if (!e.empty()) {
    r.mae = mae(e);
    r.se = bootstrap_se(e, B, seed);
  } else {
    r.mae = std::numeric_limits<double>::quiet_NaN();
    r.se = std::numeric_limits<double>::quiet_NaN();
  }
  return r;
}

}  // namespace

LosoReport run_loso(const Dataset& dataset, std::span<const Fold> folds, TaskKind task,
                    std::span<Predictor* const> predictors, const EvalConfig& cfg) {
  if (predictors.empty()) throw Error(ErrorCode::InvalidConfig, "no predictors selected");
  for (std::size_t i = 0; i < predictors.size(); ++i)
    for (std::size_t j = i + 1; j < predictors.size(); ++j)
      if (predictors[i]->name() == predictors[j]->name())
        throw Error(ErrorCode::InvalidConfig, "predictor '" + predictors[i]->name() + "' selected twice");

  LosoReport report;
  report.task = task;
  report.bootstrap = cfg.bootstrap;
  report.seed = cfg.seed;
  report.methods.resize(predictors.size());

  // per method, per fold: predictions in test-index order
  std::vector<std::vector<std::vector<Prediction>>> by_fold(
      predictors.size(), std::vector<std::vector<Prediction>>(folds.size()));

  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& fold = folds[f];
    const Dataset train = subset_of(dataset, fold.train);
    for (std::size_t m = 0; m < predictors.size(); ++m) {
      Predictor& p = *predictors[m];
      p.fit(train, task);
      auto& out = by_fold[m][f];
      out.resize(fold.test.size());
      parallel_for(fold.test.size(), cfg.jobs, [&](std::size_t t) {
        const auto& s = dataset.samples[fold.test[t]];
        out[t] = Prediction{fold.test[t], fold.name, s.target(task), p.predict(s.window)};
      });
    }
  }

  const std::uint64_t pooled_tag = fnv1a64("pooled");
  for (std::size_t m = 0; m < predictors.size(); ++m) {
    auto& mr = report.methods[m];
    const auto name = predictors[m]->name();
    const auto name_tag = fnv1a64(name);
    mr.predictions.method = name;
    for (std::size_t f = 0; f < folds.size(); ++f) {
      const auto& items = by_fold[m][f];
      mr.predictions.items.insert(mr.predictions.items.end(), items.begin(), items.end());
      auto fr = summarize(folds[f].name, items, cfg.bootstrap,
                          derive_seed(cfg.seed, fnv1a64(folds[f].name), name_tag));
      for (std::size_t o = 0; o < predictors.size(); ++o) {
        if (o == m) continue;
        auto [ea, eb] = paired_errors(items, by_fold[o][f]);
        if (ea.empty()) continue;
        fr.comparisons[predictors[o]->name()] =
            paired_bootstrap(ea, eb, cfg.bootstrap,
                             derive_seed(cfg.seed, fnv1a64(folds[f].name), name_tag,
                                         fnv1a64(predictors[o]->name())));
      }
      mr.folds.push_back(std::move(fr));
    }
    mr.pooled = summarize("pooled", mr.predictions.items, cfg.bootstrap,
                          derive_seed(cfg.seed, pooled_tag, name_tag));
  }
  for (std::size_t m = 0; m < predictors.size(); ++m) {
    auto& mr = report.methods[m];
    for (std::size_t o = 0; o < predictors.size(); ++o) {
      if (o == m) continue;
      auto [ea, eb] = paired_errors(mr.predictions.items, report.methods[o].predictions.items);
      if (ea.empty()) continue;
      mr.pooled.comparisons[predictors[o]->name()] = paired_bootstrap(
          ea, eb, cfg.bootstrap,
          derive_seed(cfg.seed, pooled_tag, fnv1a64(mr.predictions.method),
                      fnv1a64(predictors[o]->name())));
    }
  }
  return report;
}

namespace {

nlohmann::json fold_json(const FoldReport& f) {
  auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json cmp = nlohmann::json::object();
  for (const auto& [k, v] : f.comparisons) cmp[k] = v;
  return {{"fold", f.fold}, {"n", f.n},     {"missing", f.missing},
          {"mae", num(f.mae)}, {"se", num(f.se)}, {"comparisons", cmp}};
}

std::string fmt(const nlohmann::json& v, const char* spec) {
  if (!v.is_number()) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v.get<double>());
  return buf;
}

}  // namespace

nlohmann::json report_json(const LosoReport& r, const std::string& config_hash) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : r.methods) {
    nlohmann::json folds = nlohmann::json::array();
    for (const auto& f : m.folds) folds.push_back(fold_json(f));
    methods.push_back({{"method", m.predictions.method}, {"folds", folds}, {"pooled", fold_json(m.pooled)}});
  }
  nlohmann::json j = {{"task", task_name(r.task)},
                      {"config_hash", config_hash},
                      {"bootstrap", r.bootstrap},
                      {"seed", r.seed},
                      {"methods", methods}};
  // The first method's folds are also exposed at the top level.
  if (!r.methods.empty()) {
    j["method"] = methods.front()["method"];
    j["folds"] = methods.front()["folds"];
    j["pooled"] = methods.front()["pooled"];
  }
  return j;
}

void write_report_table(const nlohmann::json& report, std::ostream& out) {
  out << "task: " << report.value("task", std::string("?")) << "\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-18s %-10s %6s %7s %8s %8s  %s\n", "method", "fold", "n",
                "missing", "MAE", "SE", "p vs others");
  out << line;
  for (const auto& m : report.at("methods")) {
    auto row = [&](const nlohmann::json& f) {
      std::string cmp;
      for (const auto& [k, v] : f.at("comparisons").items()) {
        if (!cmp.empty()) cmp += ", ";
        cmp += k + "=" + fmt(v, "%.4f") + significance_stars(v.get<double>());
      }
      std::snprintf(line, sizeof line, "%-18s %-10s %6zu %7zu %8s %8s  %s\n",
                    m.at("method").get<std::string>().c_str(), f.at("fold").get<std::string>().c_str(),
                    f.at("n").get<std::size_t>(), f.at("missing").get<std::size_t>(),
                    fmt(f.at("mae"), "%.4f").c_str(), fmt(f.at("se"), "%.4f").c_str(), cmp.c_str());
      out << line;
    };
    for (const auto& f : m.at("folds")) row(f);
    row(m.at("pooled"));
  }
}

void write_report_table(const LosoReport& r, std::ostream& out) {
  write_report_table(report_json(r, ""), out);
}

void write_predictions_csv(const MethodReport& m, const Dataset& d, std::ostream& out) {
  out << "fold,subject_id,label_date,true,pred\n";
  for (const auto& p : m.predictions.items) {
    const auto& s = d.samples.at(p.sample_index);
    out << p.fold << ',' << s.window.subject_id << ',' << format_iso_date(s.label_date) << ','
        << p.truth.value() << ',';
    if (p.pred) out << p.pred->value();
    out << '\n';
  }
}

}  // namespace semloop
