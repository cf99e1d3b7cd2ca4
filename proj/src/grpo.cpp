#include "semloop/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <exception>
#include <numbers>
#include <numeric>
#include <ostream>
#include <thread>

#include "semloop/prompting.hpp"
#include "semloop/random.hpp"

namespace semloop {

AdvantageBatch normalize_advantages(std::span<const double> rewards, double epsilon) {
  if (rewards.size() < 2)
    throw Error(ErrorCode::GroupTooSmall, "need K >= 2 rewards, got " + std::to_string(rewards.size()));
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidConfig, "epsilon must be positive");
  AdvantageBatch b;
  b.rewards.assign(rewards.begin(), rewards.end());
  b.epsilon = epsilon;
  const double k = static_cast<double>(rewards.size());
  const auto [lo, hi] = std::minmax_element(rewards.begin(), rewards.end());
  if (*lo == *hi) {
    // Summation rounding would otherwise leave ~1e-12 residues here.
    b.mu = *lo;
    b.advantages.assign(rewards.size(), 0.0);
    return b;
  }
  b.mu = std::accumulate(rewards.begin(), rewards.end(), 0.0) / k;
  double ss = 0.0;
  for (double r : rewards) ss += (r - b.mu) * (r - b.mu);
  b.sd = std::sqrt(ss / k);
  b.advantages.reserve(rewards.size());
  for (double r : rewards) b.advantages.push_back((r - b.mu) / (b.sd + epsilon));
  return b;
}

std::vector<Trajectory> rollout_group(const LabeledSample& sample, std::size_t sample_ref,
                                      TaskKind task, const FeatureSchema& schema,
                                      Provider& provider, const RewardSpec& spec,
                                      const RolloutOptions& opts) {
  if (opts.K < 2) throw Error(ErrorCode::GroupTooSmall, "K must be >= 2");
  const bool require_tags = provider.require_think_tags();
  auto prompt = std::make_shared<const std::string>(render_stage1(sample.window, schema));
  const Score y = sample.target(task);

  auto stage1 = provider.sample({*prompt, opts.K, opts.temperature, opts.max_tokens, opts.seed});
  if (stage1.size() != opts.K)
    throw Error(ErrorCode::MalformedResponse, "provider returned " + std::to_string(stage1.size()) +
                                                  " completions, expected " + std::to_string(opts.K));

  std::vector<Trajectory> out;
  out.reserve(opts.K);
  for (std::size_t k = 0; k < opts.K; ++k) {
    Trajectory t;
    t.sample_ref = sample_ref;
    t.stage1_prompt = prompt;
    t.stage1_completion = std::move(stage1[k]);
    t.summary = extract_summary(t.stage1_completion.text, require_tags);
    if (t.summary) {
      t.stage2_prompt = render_stage2(t.summary.value(), task);
      try {
        auto c = provider.sample({*t.stage2_prompt, 1, opts.temperature, opts.max_tokens,
                                  derive_seed(opts.seed, k + 1)});
        if (c.size() != 1) throw Error(ErrorCode::MalformedResponse, "expected one completion");
        t.stage2_completion = std::move(c.front());
        t.prediction = extract_score(t.stage2_completion->text, require_tags);
      } catch (const Error& e) {
        t.error = e.what();
        t.prediction = ParseFailure::NoScoreToken;
      }
    }
    t.reward = trajectory_reward(t.summary, t.prediction, y, spec);
    out.push_back(std::move(t));
  }
  return out;
}

namespace {

template <typename F>
void for_each_decision(const Trajectory& t, F&& f) {
  for (const auto& d : t.stage1_completion.decisions) f(d);
  if (t.stage2_completion)
    for (const auto& d : t.stage2_completion->decisions) f(d);
}

Eigen::MatrixXd& logits_for(ToyPolicyParams& p, PolicyStage s) {
  return s == PolicyStage::Abstraction ? p.stage1_logits : p.stage2_logits;
}
const Eigen::MatrixXd& logits_for(const ToyPolicyParams& p, PolicyStage s) {
  return s == PolicyStage::Abstraction ? p.stage1_logits : p.stage2_logits;
}

// Adds scale * d KL(softmax(z) || softmax(z_ref)) / dz to `grad_row`.
void add_kl_gradient(Eigen::Ref<Eigen::RowVectorXd, 0, Eigen::InnerStride<>> grad_row,
                     const Eigen::Ref<const Eigen::RowVectorXd>& z,
                     const Eigen::Ref<const Eigen::RowVectorXd>& z_ref, double scale) {
  const auto p = softmax(z);
  const auto q = softmax(z_ref);
  std::vector<double> log_ratio(p.size());
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    log_ratio[i] = std::log(p[i]) - std::log(q[i]);
    kl += p[i] * log_ratio[i];
  }
  for (std::size_t i = 0; i < p.size(); ++i)
    grad_row[static_cast<Eigen::Index>(i)] += scale * p[i] * (log_ratio[i] - kl);
}

}  // namespace

VisitedContexts visited_contexts(std::span<const RolloutGroup> groups) {
  VisitedContexts v;
  for (const auto& g : groups)
    for (const auto& t : g.trajectories)
      for_each_decision(t, [&](const Decision& d) {
        (d.stage == PolicyStage::Abstraction ? v.stage1 : v.stage2).insert(d.context);
      });
  return v;
}

ToyPolicyParams grpo_objective_gradient(std::span<const RolloutGroup> groups,
                                        const ToyPolicyParams& params, const ReferencePolicy& ref,
                                        double beta, double temperature) {
  if (!(temperature > 0.0))
    throw Error(ErrorCode::InvalidConfig, "gradient needs a positive sampling temperature");
  ToyPolicyParams grad{Eigen::MatrixXd::Zero(params.stage1_logits.rows(), params.stage1_logits.cols()),
                       Eigen::MatrixXd::Zero(params.stage2_logits.rows(), params.stage2_logits.cols())};

  std::size_t total = 0;
  for (const auto& g : groups) {
    if (g.advantages.advantages.size() != g.trajectories.size())
      throw Error(ErrorCode::ShapeMismatch, "advantages and trajectories differ in length");
    total += g.trajectories.size();
  }
  if (total == 0) return grad;

  const double norm = 1.0 / static_cast<double>(total);
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.trajectories.size(); ++k) {
      const auto& t = g.trajectories[k];
      if (t.stage1_completion.decisions.empty())
        throw Error(ErrorCode::MissingDecisions,
                    "trajectory for sample " + std::to_string(t.sample_ref) + " has no recorded decisions");
      const double a = g.advantages.advantages[k];
      if (a == 0.0) continue;
      for_each_decision(t, [&](const Decision& d) {
        const auto row = static_cast<Eigen::Index>(d.context);
        const auto& z = logits_for(params, d.stage);
        if (row >= z.rows() || static_cast<Eigen::Index>(d.choice) >= z.cols())
          throw Error(ErrorCode::ShapeMismatch, "decision outside the parameter table");
        const auto p = softmax(z.row(row), temperature);
        auto grow = logits_for(grad, d.stage).row(row);
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double onehot = i == d.choice ? 1.0 : 0.0;
          grow[static_cast<Eigen::Index>(i)] += norm * a * (onehot - p[i]) / temperature;
        }
      });
    }
  }

  if (beta != 0.0) {
    const auto visited = visited_contexts(groups);
    const double scale = -beta / static_cast<double>(visited.stage1.size() + visited.stage2.size());
    for (auto c : visited.stage1) {
      const auto i = static_cast<Eigen::Index>(c);
      add_kl_gradient(grad.stage1_logits.row(i), params.stage1_logits.row(i),
                      ref.params().stage1_logits.row(i), scale);
    }
    for (auto c : visited.stage2) {
      const auto i = static_cast<Eigen::Index>(c);
      add_kl_gradient(grad.stage2_logits.row(i), params.stage2_logits.row(i),
                      ref.params().stage2_logits.row(i), scale);
    }
  }
  return grad;
}

void TrainConfig::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorCode::InvalidConfig, m); };
  if (K < 2) bad("train.K must be >= 2");
  if (batch_samples < 1) bad("train.batch_samples must be >= 1");
  if (!(beta >= 0.0)) bad("train.beta must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) bad("train.lr must be a finite non-negative number");
  if (!(epsilon > 0.0)) bad("train.epsilon must be positive");
  if (!(temperature > 0.0)) bad("train.temperature must be positive");
  if (jobs < 1) bad("train.jobs must be >= 1");
}

double cosine_lr(double lr0, std::size_t step, std::size_t steps) {
  if (steps == 0) return lr0;
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(steps)));
}

void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, n));
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> workers;
  workers.reserve(jobs);
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

TrainResult train(const Dataset& dataset, TaskKind task, const TrainConfig& cfg,
                  const RewardSpec& spec, ToyPolicy& policy, const CheckpointFn& on_checkpoint) {
  cfg.validate();
  spec.validate();
  if (dataset.samples.empty()) throw Error(ErrorCode::EmptySet, "training set is empty");

  const ReferencePolicy ref(*policy.params());
  TrainResult result{*policy.params(), {}, std::nullopt};

  Rng batch_rng(derive_seed(cfg.seed, 0xba7c4ULL));
  std::vector<std::size_t> order(dataset.samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();

  constexpr std::size_t kStableWindow = 50;
  std::deque<double> recent_changes;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const double lr = cosine_lr(cfg.lr, step, cfg.steps);

    std::vector<std::size_t> batch(cfg.batch_samples);
    for (auto& idx : batch) {
      if (cursor == order.size()) {
        for (std::size_t i = order.size(); i > 1; --i)
          std::swap(order[i - 1], order[uniform_index(batch_rng, i)]);
        cursor = 0;
      }
      idx = order[cursor++];
    }

    std::vector<RolloutGroup> groups(batch.size());
    parallel_for(batch.size(), cfg.jobs, [&](std::size_t g) {
      const RolloutOptions opts{cfg.K, cfg.temperature, cfg.max_tokens, derive_seed(cfg.seed, step, g)};
      groups[g].trajectories =
          rollout_group(dataset.samples[batch[g]], batch[g], task, dataset.schema, policy, spec, opts);
      std::vector<double> rewards;
      rewards.reserve(groups[g].trajectories.size());
      for (const auto& t : groups[g].trajectories) rewards.push_back(t.reward);
      groups[g].advantages = normalize_advantages(rewards, cfg.epsilon);
    });

    double sum = 0.0, sum_sq = 0.0;
    std::size_t count = 0;
    for (const auto& g : groups)
      for (double r : g.advantages.rewards) {
        sum += r;
        sum_sq += r * r;
        ++count;
      }
    const double mean = sum / static_cast<double>(count);
    const double var = std::max(0.0, sum_sq / static_cast<double>(count) - mean * mean);

    const auto current = policy.params();
    const double kl = toy_kl(*current, ref, visited_contexts(groups));
    const auto grad = grpo_objective_gradient(groups, *current, ref, cfg.beta, cfg.temperature);
    policy.set_params(toy_apply_update(*current, grad, lr));

    result.curve.push_back({step, mean, std::sqrt(var), kl, lr});
    if (result.curve.size() >= 2) {
      recent_changes.push_back(mean - result.curve[result.curve.size() - 2].mean_reward);
      if (recent_changes.size() > kStableWindow) recent_changes.pop_front();
      if (!result.stable_step && recent_changes.size() == kStableWindow) {
        double m = 0.0, s = 0.0;
        for (double c : recent_changes) m += c;
        m /= kStableWindow;
        for (double c : recent_changes) s += (c - m) * (c - m);
        if (std::sqrt(s / kStableWindow) < 1e-3) result.stable_step = step;
      }
    }
    if (on_checkpoint && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      on_checkpoint(step + 1, *policy.params());
  }
  result.params = *policy.params();
  return result;
}

void write_learning_curve_csv(std::span<const LearningPoint> curve, std::ostream& out) {
  out << "step,mean_reward,reward_std,kl,lr\n";
  char buf[256];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", p.step, p.mean_reward,
                  p.reward_std, p.kl, p.lr);
    out << buf;
  }
}

InferenceResult infer_once(Provider& provider, const BehavioralWindow& window,
                           const FeatureSchema& schema, TaskKind task, double temperature,
                           std::size_t max_tokens, std::optional<std::uint64_t> seed) {
  const bool require_tags = provider.require_think_tags();
  InferenceResult r;
  auto s1 = provider.sample({render_stage1(window, schema), 1, temperature, max_tokens, seed});
  if (s1.size() != 1) throw Error(ErrorCode::MalformedResponse, "expected one completion");
  r.summary = extract_summary(s1.front().text, require_tags);
  if (!r.summary) return r;
  std::optional<std::uint64_t> seed2;
  if (seed) seed2 = derive_seed(*seed, 1);
  auto s2 = provider.sample({render_stage2(r.summary.value(), task), 1, temperature, max_tokens, seed2});
  if (s2.size() != 1) throw Error(ErrorCode::MalformedResponse, "expected one completion");
  r.prediction = extract_score(s2.front().text, require_tags);
  return r;
}

namespace {

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint ") + what + " is not a matrix");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = static_cast<Eigen::Index>(j.front().size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(ErrorCode::ShapeMismatch, std::string("ragged checkpoint ") + what);
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = row[static_cast<std::size_t>(c)].get<double>();
  }
  return m;
}

}  // namespace

nlohmann::json checkpoint_json(const ToyPolicyParams& params, const ToyConfig& toy,
                               const std::string& config_hash, std::uint64_t seed) {
  return {
      {"format", "semloop-toy-checkpoint"},
      {"version", 1},
      {"config_hash", config_hash},
      {"seed", seed},
      {"buckets", toy.buckets},
      {"templates", toy.templates},
      {"signal_feature", toy.signal_feature},
      {"range", {toy.range_lo, toy.range_hi}},
      {"stage1_logits", matrix_json(params.stage1_logits)},
      {"stage2_logits", matrix_json(params.stage2_logits)},
  };
}

ToyPolicyParams params_from_checkpoint(const nlohmann::json& j) {
  try {
    if (j.at("format") != "semloop-toy-checkpoint")
      throw Error(ErrorCode::InvalidConfig, "not a toy checkpoint");
    ToyPolicyParams p{matrix_from_json(j.at("stage1_logits"), "stage1_logits"),
                      matrix_from_json(j.at("stage2_logits"), "stage2_logits")};
    p.validate();
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, std::string("checkpoint: ") + e.what());
  }
}

}  // namespace semloop
