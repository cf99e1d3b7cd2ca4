#pragma once

// Independent reference computations used by the tests. Nothing here calls
// the training code; expected rewards are enumerated exactly.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "semloop/grpo.hpp"
#include "semloop/prompting.hpp"

namespace semloop::oracle {

inline double closed_form_reward(int p, int y, double sigma) {
  const long double d = static_cast<long double>(p - y);
  const long double s = static_cast<long double>(sigma);
  return static_cast<double>(std::exp(-(d * d) / (2.0L * s * s)));
}

inline std::vector<double> log_softmax(const Eigen::RowVectorXd& z) {
  const double m = z.maxCoeff();
  double s = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) s += std::exp(z[i] - m);
  std::vector<double> out(static_cast<std::size_t>(z.size()));
  for (Eigen::Index i = 0; i < z.size(); ++i) out[static_cast<std::size_t>(i)] = z[i] - m - std::log(s);
  return out;
}

inline double categorical_kl(const Eigen::RowVectorXd& z, const Eigen::RowVectorXd& zr) {
  const auto lp = log_softmax(z), lq = log_softmax(zr);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return kl;
}

// (1/N) sum A_k log pi(tau_k) - beta * mean visited-context KL, at temperature 1.
inline double surrogate_objective(std::span<const RolloutGroup> groups, const ToyPolicyParams& p,
                                  const ToyPolicyParams& ref, double beta) {
  double total = 0.0;
  std::size_t n = 0;
  std::set<std::size_t> v1, v2;
  for (const auto& g : groups) {
    for (std::size_t k = 0; k < g.trajectories.size(); ++k) {
      const auto& t = g.trajectories[k];
      double logp = 0.0;
      auto add = [&](const Decision& d) {
        const bool s1 = d.stage == PolicyStage::Abstraction;
        const auto& z = s1 ? p.stage1_logits : p.stage2_logits;
        logp += log_softmax(z.row(static_cast<Eigen::Index>(d.context)))[d.choice];
        (s1 ? v1 : v2).insert(d.context);
      };
      for (const auto& d : t.stage1_completion.decisions) add(d);
      if (t.stage2_completion)
        for (const auto& d : t.stage2_completion->decisions) add(d);
      total += g.advantages.advantages[k] * logp;
      ++n;
    }
  }
  double kl = 0.0;
  for (auto c : v1)
    kl += categorical_kl(p.stage1_logits.row(static_cast<Eigen::Index>(c)),
                         ref.stage1_logits.row(static_cast<Eigen::Index>(c)));
  for (auto c : v2)
    kl += categorical_kl(p.stage2_logits.row(static_cast<Eigen::Index>(c)),
                         ref.stage2_logits.row(static_cast<Eigen::Index>(c)));
  const auto nv = v1.size() + v2.size();
  return total / static_cast<double>(n) - beta * (nv ? kl / static_cast<double>(nv) : 0.0);
}

inline std::vector<std::size_t> sample_buckets(const Dataset& d, const ToyPolicy& policy) {
  std::vector<std::size_t> b;
  b.reserve(d.samples.size());
  for (const auto& s : d.samples) b.push_back(policy.bucketize_stage1(render_stage1(s.window, d.schema)));
  return b;
}

// Best achievable expected reward: every bucket states itself and Stage 2
// answers the best constant score for the samples in that bucket.
inline double optimal_expected_reward(const Dataset& d, TaskKind task, const ToyPolicy& policy,
                                      const RewardSpec& spec) {
  const auto buckets = sample_buckets(d, policy);
  const std::size_t B = policy.config().buckets;
  double total = 0.0;
  for (std::size_t b = 0; b < B; ++b) {
    double best = 0.0;
    for (int s = Score::kMin; s <= Score::kMax; ++s) {
      double sum = 0.0;
      for (std::size_t i = 0; i < d.samples.size(); ++i)
        if (buckets[i] == b) sum += closed_form_reward(s, d.samples[i].target(task).value(), spec.sigma);
      best = std::max(best, sum);
    }
    total += best;
  }
  return total / static_cast<double>(d.samples.size());
}

// Exact expected reward of `params` sampled at `temperature` > 0, summing over
// templates, lossy qualifiers and scores.
inline double expected_reward(const Dataset& d, TaskKind task, const ToyPolicy& policy,
                              const ToyPolicyParams& params, const RewardSpec& spec,
                              double temperature = 1.0) {
  const auto buckets = sample_buckets(d, policy);
  const std::size_t B = policy.config().buckets, M = policy.config().templates;
  auto score_value = [&](std::size_t ctx, int y) {
    const auto q = softmax(params.stage2_logits.row(static_cast<Eigen::Index>(ctx)), temperature);
    double v = 0.0;
    for (int s = 0; s < Score::kLevels; ++s) v += q[static_cast<std::size_t>(s)] * closed_form_reward(s, y, spec.sigma);
    return v;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    const int y = d.samples[i].target(task).value();
    const std::size_t b = buckets[i];
    const auto pt = softmax(params.stage1_logits.row(static_cast<Eigen::Index>(b)), temperature);
    double v = pt[0] * score_value(policy.stage2_context(policy.summary_text(0, b, 0)), y);
    for (std::size_t m = 1; m < M; ++m) {
      double lossy = 0.0;
      for (std::size_t q = 0; q < B; ++q) lossy += score_value(policy.stage2_context(policy.summary_text(m, b, q)), y);
      v += pt[m] * lossy / static_cast<double>(B);
    }
    total += v;
  }
  return total / static_cast<double>(d.samples.size());
}

inline double min_sufficient_probability(const ToyPolicyParams& p) {
  double lo = std::numeric_limits<double>::infinity();
  for (Eigen::Index b = 0; b < p.stage1_logits.rows(); ++b) lo = std::min(lo, softmax(p.stage1_logits.row(b))[0]);
  return lo;
}

}  // namespace semloop::oracle
