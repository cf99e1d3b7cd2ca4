#pragma once

// Leave-one-subset-out evaluation: predictors, MAE, bootstrap standard
// errors and the paired bootstrap test.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "semloop/grpo.hpp"
#include "semloop/ingest.hpp"
#include "semloop/policy.hpp"

namespace semloop {

// fit() only ever sees a dataset holding the fold's train split.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual std::string name() const = 0;
  virtual void fit(const Dataset& train, TaskKind task) = 0;
  // nullopt records a missing prediction (e.g. a provider failure).
  virtual std::optional<Score> predict(const BehavioralWindow& window) const = 0;
};

// clamp(round-half-even(mean(y_train)), 0, 6), predicted for every window.
class MeanBaseline : public Predictor {
 public:
  std::string name() const override { return "mean-baseline"; }
  void fit(const Dataset& train, TaskKind task) override;
  std::optional<Score> predict(const BehavioralWindow&) const override { return value_; }

  Score value() const { return value_; }

 private:
  Score value_{0};
};

// Least squares with intercept on per-window feature means. Features with no
// recorded value in a window take the train-split mean. Constant columns are
// dropped; a rank-deficient design falls back to the mean baseline.
class LinearBaseline : public Predictor {
 public:
  std::string name() const override { return "linear-baseline"; }
  void fit(const Dataset& train, TaskKind task) override;
  std::optional<Score> predict(const BehavioralWindow& window) const override;

  bool degenerate() const { return fallback_.has_value(); }

 private:
  Eigen::VectorXd features(const BehavioralWindow& w) const;

  std::vector<std::string> keys_;
  Eigen::VectorXd impute_;
  std::vector<Eigen::Index> kept_;
  Eigen::VectorXd coef_;  // intercept first
  std::optional<Score> fallback_;
};

// Greedy (temperature 0) two-stage inference through the toy policy. With
// fixed parameters fit() is a no-op; otherwise it trains from uniform
// initialization on the train split.
class ToyPredictor : public Predictor {
 public:
  ToyPredictor(ToyConfig toy, ToyPolicyParams fixed);
  ToyPredictor(ToyConfig toy, TrainConfig train, RewardSpec spec);

  std::string name() const override { return "toy"; }
  void fit(const Dataset& train, TaskKind task) override;
  std::optional<Score> predict(const BehavioralWindow& window) const override;

  const ToyPolicy* policy() const { return policy_.get(); }

 private:
  ToyConfig toy_;
  std::optional<ToyPolicyParams> fixed_;
  TrainConfig train_;
  RewardSpec spec_;
  TaskKind task_ = TaskKind::Anxiety;
  std::unique_ptr<ToyPolicy> policy_;
};

// Any provider run through the two-stage pipeline without training. Provider
// errors and unparseable outputs become missing predictions.
class ProviderPredictor : public Predictor {
 public:
  ProviderPredictor(Provider& provider, double temperature = 0.0, std::size_t max_tokens = 2048,
                    std::optional<std::uint64_t> seed = std::nullopt);

  std::string name() const override { return provider_.name(); }
  void fit(const Dataset& train, TaskKind task) override;
  std::optional<Score> predict(const BehavioralWindow& window) const override;

 private:
  Provider& provider_;
  double temperature_;
  std::size_t max_tokens_;
  std::optional<std::uint64_t> seed_;
  FeatureSchema schema_ = builtin_schema(SchemaName::GLOBEM);
  TaskKind task_ = TaskKind::Anxiety;
};

struct Prediction {
  std::size_t sample_index = 0;
  std::string fold;
  Score truth{0};
  std::optional<Score> pred;

  friend bool operator==(const Prediction&, const Prediction&) = default;
};

struct PredictionSet {
  std::string method;
  std::vector<Prediction> items;
};

// Arithmetic mean of absolute errors. Throws EmptySet.
double mae(std::span<const double> abs_errors);
double mae(const PredictionSet& preds);  // over non-missing predictions
// Unweighted mean of per-fold MAEs.
double fold_mean_mae(std::span<const double> fold_maes);

// Population std of B resampled MAEs. Throws EmptySet.
double bootstrap_se(std::span<const double> abs_errors, std::size_t B, std::uint64_t seed);

// One-sided: fraction of B paired resamples where mean(errA*) >= mean(errB*).
// Small p means A is reliably better than B. Throws LengthMismatch/EmptySet.
double paired_bootstrap(std::span<const double> err_a, std::span<const double> err_b,
                        std::size_t B, std::uint64_t seed);

// "", "*", "**" or "***" at 0.05 / 0.01 / 0.001.
std::string significance_stars(double p);

struct FoldReport {
  std::string fold;
  std::size_t n = 0;        // test samples
  std::size_t missing = 0;  // of which without a prediction
  double mae = 0.0;
  double se = 0.0;
  std::map<std::string, double> comparisons;  // other method -> p-value
};

struct MethodReport {
  PredictionSet predictions;
  std::vector<FoldReport> folds;
  FoldReport pooled;
};

struct LosoReport {
  TaskKind task = TaskKind::Anxiety;
  std::size_t bootstrap = 5000;
  std::uint64_t seed = 0;
  std::vector<MethodReport> methods;

  const MethodReport& method(std::string_view name) const;
};

struct EvalConfig {
  std::size_t bootstrap = 5000;
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
};

// Fits each predictor on every fold's train split, predicts its test split,
// and compares every pair of methods per fold and on the pooled set using
// samples both methods predicted.
LosoReport run_loso(const Dataset& dataset, std::span<const Fold> folds, TaskKind task,
                    std::span<Predictor* const> predictors, const EvalConfig& cfg);

// Copy of `d` holding only the listed samples.
Dataset subset_of(const Dataset& d, std::span<const std::size_t> indices);

nlohmann::json report_json(const LosoReport& r, const std::string& config_hash);
void write_report_table(const LosoReport& r, std::ostream& out);
void write_report_table(const nlohmann::json& report, std::ostream& out);
// fold,subject_id,label_date,true,pred (pred empty when missing).
void write_predictions_csv(const MethodReport& m, const Dataset& d, std::ostream& out);

}  // namespace semloop
