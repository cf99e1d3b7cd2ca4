#pragma once

// Two-stage rollouts, group-relative advantages, the KL-regularized policy
// gradient and the training loop for the toy policy.

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "semloop/ingest.hpp"
#include "semloop/parsing.hpp"
#include "semloop/policy.hpp"
#include "semloop/reward.hpp"

namespace semloop {

struct Trajectory {
  std::size_t sample_ref = 0;
  std::shared_ptr<const std::string> stage1_prompt;  // shared by the group
  Completion stage1_completion;
  ParseOutcome<std::string> summary = ParseFailure::EmptySummary;
  std::optional<std::string> stage2_prompt;
  std::optional<Completion> stage2_completion;
  ParseOutcome<Score> prediction = ParseFailure::NoScoreToken;
  double reward = 0.0;
  std::optional<std::string> error;  // provider failure during Stage 2
};

struct AdvantageBatch {
  std::vector<double> rewards;
  double mu = 0.0;
  double sd = 0.0;  // population standard deviation
  double epsilon = 1e-4;
  std::vector<double> advantages;
};

// A_k = (r_k - mean) / (sd + epsilon). Throws GroupTooSmall for K < 2.
AdvantageBatch normalize_advantages(std::span<const double> rewards, double epsilon = 1e-4);

struct RolloutOptions {
  std::size_t K = 8;
  double temperature = 1.0;
  std::size_t max_tokens = 1024;
  std::uint64_t seed = 0;
};

// Renders the Stage-1 prompt once, samples K summaries, and runs Stage 2 for
// every valid summary. Stage-1 provider errors abort the group; Stage-2
// errors become reward-0 trajectories carrying the error message.
std::vector<Trajectory> rollout_group(const LabeledSample& sample, std::size_t sample_ref,
                                      TaskKind task, const FeatureSchema& schema,
                                      Provider& provider, const RewardSpec& spec,
                                      const RolloutOptions& opts);

struct RolloutGroup {
  std::vector<Trajectory> trajectories;
  AdvantageBatch advantages;
};

VisitedContexts visited_contexts(std::span<const RolloutGroup> groups);

// (1/sum K) sum_g sum_k A_k grad log pi(tau_k)  -  beta grad KL(pi || ref),
// where log pi(tau) sums the recorded decisions taken at `temperature` and
// the KL is toy_kl over the contexts the batch visited. Throws
// MissingDecisions for trajectories from non-trainable providers.
ToyPolicyParams grpo_objective_gradient(std::span<const RolloutGroup> groups,
                                        const ToyPolicyParams& params, const ReferencePolicy& ref,
                                        double beta, double temperature = 1.0);

struct TrainConfig {
  std::size_t K = 8;
  std::size_t batch_samples = 32;
  double beta = 0.04;
  double lr = 5e-5;  // initial value of the cosine schedule
  std::size_t steps = 100;
  double epsilon = 1e-4;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0 disables
  std::size_t jobs = 1;
  std::size_t max_tokens = 1024;

  void validate() const;
};

// lr0 * (1 + cos(pi * step / steps)) / 2.
double cosine_lr(double lr0, std::size_t step, std::size_t steps);

struct LearningPoint {
  std::size_t step = 0;
  double mean_reward = 0.0;
  double reward_std = 0.0;
  double kl = 0.0;
  double lr = 0.0;

  friend bool operator==(const LearningPoint&, const LearningPoint&) = default;
};

struct TrainResult {
  ToyPolicyParams params;
  std::vector<LearningPoint> curve;
  // First step at which the rolling 50-step std of mean-reward changes
  // fell below 1e-3.
  std::optional<std::size_t> stable_step;
};

using CheckpointFn = std::function<void(std::size_t step, const ToyPolicyParams&)>;

// Trains `policy` in place on every sample of `dataset`.
TrainResult train(const Dataset& dataset, TaskKind task, const TrainConfig& cfg,
                  const RewardSpec& spec, ToyPolicy& policy, const CheckpointFn& on_checkpoint = {});

void write_learning_curve_csv(std::span<const LearningPoint> curve, std::ostream& out);

// One greedy-or-sampled pass through both stages, as done at inference.
struct InferenceResult {
  ParseOutcome<std::string> summary = ParseFailure::EmptySummary;
  ParseOutcome<Score> prediction = ParseFailure::NoScoreToken;
};

InferenceResult infer_once(Provider& provider, const BehavioralWindow& window,
                           const FeatureSchema& schema, TaskKind task, double temperature,
                           std::size_t max_tokens, std::optional<std::uint64_t> seed);

// Checkpoint file: toy parameters plus provenance.
nlohmann::json checkpoint_json(const ToyPolicyParams& params, const ToyConfig& toy,
                               const std::string& config_hash, std::uint64_t seed);
ToyPolicyParams params_from_checkpoint(const nlohmann::json& j);

// Runs fn(i) for i in [0, n) on up to `jobs` threads.
void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn);

}  // namespace semloop
