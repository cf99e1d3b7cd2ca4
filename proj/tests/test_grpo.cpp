#include <doctest.h>

#include <cmath>
#include <sstream>

#include "fixtures.hpp"
#include "oracle.hpp"
#include "semloop/grpo.hpp"
#include "semloop/prompting.hpp"

using namespace semloop;
using semloop::testing::thrown_code;

namespace {

LabeledSample one_sample(int anxiety = 4) {
  SynthConfig c;
  c.subjects_per_subset = 1;
  c.weeks_per_subject = 1;
  c.signal_feature = semloop::testing::kSleepKey;
  auto s = gen_synthetic(c).samples.front();
  s.anxiety = Score{anxiety};
  return s;
}

// Stage 1 answers `summary`; Stage 2 answers stage2(k) for the k-th Stage-2 call.
MockProvider scripted(std::string summary, std::function<std::string(std::size_t)> stage2) {
  auto counter = std::make_shared<std::size_t>(0);
  return MockProvider([=](const SampleRequest& r, std::size_t) {
    if (r.prompt.starts_with("You are analyzing")) return summary;
    return stage2((*counter)++);
  });
}

double max_abs(const ToyPolicyParams& g) {
  return std::max(g.stage1_logits.cwiseAbs().maxCoeff(), g.stage2_logits.cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("advantage worked example") {
  const std::vector<double> r{1, 0, 0, 0, 0, 0, 0, 0};
  const auto a = normalize_advantages(r, 1e-4);
  CHECK(a.mu == doctest::Approx(0.125));
  CHECK(a.sd == doctest::Approx(std::sqrt(0.875 / 8)));
  const double sd = std::sqrt(0.875 / 8);
  CHECK(std::abs(a.advantages[0] - 0.875 / (sd + 1e-4)) < 1e-12);
  CHECK(std::abs(a.advantages[0] - 2.645001) < 1e-4);  // hand-rounded reference value
  for (std::size_t k = 1; k < 8; ++k) {
    CHECK(std::abs(a.advantages[k] + 0.125 / (sd + 1e-4)) < 1e-12);
    CHECK(std::abs(a.advantages[k] + 0.377857) < 1e-4);
  }
}

TEST_CASE("advantages are standardized rewards") {
  Rng rng(3);
  for (int g = 0; g < 1000; ++g) {
    std::vector<double> r(8);
    for (auto& x : r) x = uniform01(rng);
    const auto a = normalize_advantages(r);
    double m = 0, ss = 0;
    for (double x : a.advantages) m += x;
    CHECK(std::abs(m / 8) < 1e-12);
    for (double x : a.advantages) ss += (x - m / 8) * (x - m / 8);
    CHECK(std::sqrt(ss / 8) * (a.sd + a.epsilon) / a.sd == doctest::Approx(1.0).epsilon(1e-12));
  }
  for (double v : {0.0, 0.1, 0.3, 0.4, 1.0}) {
    const auto c = normalize_advantages(std::vector<double>(8, v));
    CHECK(c.sd == 0.0);
    for (double x : c.advantages) CHECK(x == 0.0);
  }
  CHECK(thrown_code([] { normalize_advantages(std::vector<double>{1.0}); }) == ErrorCode::GroupTooSmall);
  CHECK(thrown_code([] { normalize_advantages(std::vector<double>{1.0, 0.0}, 0.0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("rollout with all-correct answers") {
  auto m = scripted("Sleep was long.", [](std::size_t) { return "score: 4"; });
  const auto t = rollout_group(one_sample(4), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, {});
  REQUIRE(t.size() == 8);
  for (const auto& x : t) {
    CHECK(x.reward == 1.0);
    CHECK(x.stage2_prompt == render_stage2("Sleep was long.", TaskKind::Anxiety));
    CHECK(x.stage1_prompt == t[0].stage1_prompt);
  }
}

TEST_CASE("rollout gates unparseable answers") {
  auto m = scripted("Sleep was long.", [](std::size_t k) {
    return k % 2 ? std::string("no idea") : "score: " + std::to_string(k % 7);
  });
  const auto t = rollout_group(one_sample(4), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, {});
  REQUIRE(t.size() == 8);
  for (const auto& x : t) {
    if (!x.prediction) CHECK(x.reward == 0.0);
    CHECK(x.reward == trajectory_reward(x.summary, x.prediction, Score{4}));
  }
}

TEST_CASE("invalid summaries skip stage 2") {
  MockProvider m([](const SampleRequest& r, std::size_t k) -> std::string {
    if (r.prompt.starts_with("You are analyzing")) return k % 2 ? "<think>x" : "<think>x</think>ok";
    return "<think>y</think>score: 4";
  }, true);
  const auto t = rollout_group(one_sample(4), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, {});
  REQUIRE(t.size() == 8);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(t[k].summary.valid() == (k % 2 == 0));
    CHECK(t[k].stage2_prompt.has_value() == t[k].summary.valid());
    CHECK(t[k].stage2_completion.has_value() == t[k].summary.valid());
    CHECK(t[k].reward == (k % 2 == 0 ? 1.0 : 0.0));
  }
}

TEST_CASE("stage 2 provider errors become annotated zero-reward trajectories") {
  auto m = scripted("Sleep was long.", [](std::size_t k) -> std::string {
    if (k == 3) throw Error(ErrorCode::Timeout, "slow");
    return "score: 4";
  });
  const auto t = rollout_group(one_sample(4), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, {});
  REQUIRE(t.size() == 8);
  CHECK(t[3].reward == 0.0);
  REQUIRE(t[3].error);
  CHECK(t[3].error->find("timeout") != std::string::npos);
  CHECK(t[2].reward == 1.0);
}

TEST_CASE("stage 1 provider errors abort the group") {
  MockProvider m(std::vector<std::string>{});
  CHECK(thrown_code([&] {
          rollout_group(one_sample(), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, {});
        }) == ErrorCode::ProviderExhausted);
  RolloutOptions o;
  o.K = 1;
  CHECK(thrown_code([&] {
          rollout_group(one_sample(), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, o);
        }) == ErrorCode::GroupTooSmall);
}

TEST_CASE("gradient is zero without advantages or penalty") {
  auto m = semloop::testing::mini_instance();
  for (auto& g : m.groups) std::fill(g.advantages.advantages.begin(), g.advantages.advantages.end(), 0.0);
  const auto grad = grpo_objective_gradient(m.groups, m.params, ReferencePolicy(m.ref), 0.0);
  CHECK(max_abs(grad) == 0.0);
}

TEST_CASE("single nonzero advantage scales that trajectory's score function") {
  auto m = semloop::testing::mini_instance();
  std::vector<RolloutGroup> one{m.groups.front()};
  auto& adv = one[0].advantages.advantages;
  std::fill(adv.begin(), adv.end(), 0.0);
  adv[1] = 2.0;
  const auto grad = grpo_objective_gradient(one, m.params, ReferencePolicy(m.ref), 0.0);
  const auto& t = one[0].trajectories[1];
  const auto& d1 = t.stage1_completion.decisions.at(0);
  const auto p = softmax(m.params.stage1_logits.row(static_cast<Eigen::Index>(d1.context)));
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK(grad.stage1_logits(static_cast<Eigen::Index>(d1.context), static_cast<Eigen::Index>(i)) ==
          doctest::Approx(2.0 / 4.0 * ((i == d1.choice ? 1.0 : 0.0) - p[i])));
}

TEST_CASE("gradient matches finite differences") {
  for (std::uint64_t seed : {17u, 23u, 31u}) {
    const auto m = semloop::testing::mini_instance(seed);
    for (double beta : {0.0, 0.04, 0.7}) {
      const auto grad = grpo_objective_gradient(m.groups, m.params, ReferencePolicy(m.ref), beta);
      const double h = 1e-5;
      double worst = 0.0;
      for (int stage = 0; stage < 2; ++stage) {
        const auto& z = stage == 0 ? m.params.stage1_logits : m.params.stage2_logits;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
          auto up = m.params, dn = m.params;
          (stage == 0 ? up.stage1_logits : up.stage2_logits).data()[i] += h;
          (stage == 0 ? dn.stage1_logits : dn.stage2_logits).data()[i] -= h;
          const double fd = (oracle::surrogate_objective(m.groups, up, m.ref, beta) -
                             oracle::surrogate_objective(m.groups, dn, m.ref, beta)) / (2 * h);
          const double an = (stage == 0 ? grad.stage1_logits : grad.stage2_logits).data()[i];
          worst = std::max(worst, std::abs(fd - an));
        }
      }
      CHECK(max_abs(grad) > 0.0);
      CHECK(worst / max_abs(grad) < 1e-4);
    }
  }
}

TEST_CASE("non-trainable trajectories cannot produce a gradient") {
  auto m = scripted("Sleep was long.", [](std::size_t) { return "score: 4"; });
  RolloutGroup g;
  g.trajectories = rollout_group(one_sample(4), 0, TaskKind::Anxiety, builtin_schema(SchemaName::GLOBEM), m, {}, {});
  g.advantages = normalize_advantages(std::vector<double>(8, 1.0));
  std::vector<RolloutGroup> gs{g};
  const auto p = ToyPolicyParams::uniform(8, 4);
  CHECK(thrown_code([&] { grpo_objective_gradient(gs, p, ReferencePolicy(p), 0.04); }) ==
        ErrorCode::MissingDecisions);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(5e-5, 0, 100) == 5e-5);
  CHECK(cosine_lr(5e-5, 50, 100) == doctest::Approx(2.5e-5));
  CHECK(cosine_lr(5e-5, 100, 100) == doctest::Approx(0.0));
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.K = 1;
  CHECK(thrown_code([&] { c.validate(); }) == ErrorCode::InvalidConfig);
  c = {};
  c.beta = -1;
  CHECK(thrown_code([&] { c.validate(); }) == ErrorCode::InvalidConfig);
}

namespace {

struct SmallTask {
  Dataset data;
  ToyConfig toy;
};

SmallTask small_task() {
  auto sc = semloop::testing::sufficient_task_config();
  sc.subjects_per_subset = 4;
  sc.weeks_per_subject = 4;
  ToyConfig tc;
  tc.signal_feature = sc.signal_feature;
  tc.range_lo = 240;
  tc.range_hi = 600;
  return {gen_synthetic(sc), tc};
}

}  // namespace

TEST_CASE("training is deterministic and independent of thread count") {
  const auto task = small_task();
  TrainConfig c;
  c.steps = 15;
  c.batch_samples = 6;
  c.lr = 1.0;
  c.seed = 5;
  ToyPolicy a(task.data.schema, task.toy), b(task.data.schema, task.toy), d(task.data.schema, task.toy);
  const auto ra = train(task.data, TaskKind::Anxiety, c, {}, a);
  const auto rb = train(task.data, TaskKind::Anxiety, c, {}, b);
  c.jobs = 3;
  const auto rd = train(task.data, TaskKind::Anxiety, c, {}, d);
  CHECK(ra.curve == rb.curve);
  CHECK(ra.params == rb.params);
  CHECK(ra.curve == rd.curve);
  CHECK(ra.curve.size() == 15);
  CHECK(ra.curve[0].lr == 1.0);
  CHECK(ra.curve[0].kl == 0.0);
  CHECK(*a.params() == ra.params);
}

TEST_CASE("zero steps leave the initialization untouched") {
  const auto task = small_task();
  TrainConfig c;
  c.steps = 0;
  ToyPolicy p(task.data.schema, task.toy);
  const auto r = train(task.data, TaskKind::Anxiety, c, {}, p);
  CHECK(r.params == ToyPolicyParams::uniform(8, 4));
  CHECK(r.curve.empty());
}

TEST_CASE("a dominating KL penalty pins the policy to the reference") {
  const auto task = small_task();
  TrainConfig c;
  c.steps = 30;
  c.batch_samples = 8;
  c.lr = 1e-7;  // lr * beta stays below the stability limit of the penalty
  c.beta = 1e6;
  ToyPolicy p(task.data.schema, task.toy);
  const auto r = train(task.data, TaskKind::Anxiety, c, {}, p);
  const auto init = ToyPolicyParams::uniform(8, 4);
  CHECK((r.params.stage1_logits - init.stage1_logits).cwiseAbs().maxCoeff() < 1e-3);
  CHECK((r.params.stage2_logits - init.stage2_logits).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("checkpoints fire on schedule") {
  const auto task = small_task();
  TrainConfig c;
  c.steps = 10;
  c.batch_samples = 4;
  c.checkpoint_every = 4;
  ToyPolicy p(task.data.schema, task.toy);
  std::vector<std::size_t> steps;
  train(task.data, TaskKind::Anxiety, c, {}, p, [&](std::size_t s, const ToyPolicyParams&) { steps.push_back(s); });
  CHECK(steps == std::vector<std::size_t>{4, 8});
}

TEST_CASE("learning curve csv") {
  std::vector<LearningPoint> pts{{0, 0.5, 0.1, 0.0, 2.0}, {1, 0.75, 0.2, 0.01, 1.0}};
  std::ostringstream out;
  write_learning_curve_csv(pts, out);
  CHECK(out.str().starts_with("step,mean_reward,reward_std,kl,lr\n0,0.5,"));
}

TEST_CASE("checkpoint round trip") {
  auto p = ToyPolicyParams::uniform(8, 4);
  p.stage1_logits(3, 1) = 0.1 + 0.2;
  p.stage2_logits(17, 6) = -1e-300;
  ToyConfig tc;
  tc.signal_feature = "x";
  const auto j = checkpoint_json(p, tc, "abc", 9);
  CHECK(params_from_checkpoint(nlohmann::json::parse(j.dump())) == p);
  auto bad = j;
  bad["format"] = "other";
  CHECK(thrown_code([&] { params_from_checkpoint(bad); }) == ErrorCode::InvalidConfig);
  bad = j;
  bad.erase("stage2_logits");
  CHECK(thrown_code([&] { params_from_checkpoint(bad); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("parallel_for propagates exceptions") {
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw Error(ErrorCode::Timeout, "x");
                  }),
                  Error);
  std::vector<int> hits(10);
  parallel_for(10, 4, [&](std::size_t i) { hits[i]++; });
  for (int h : hits) CHECK(h == 1);
}
