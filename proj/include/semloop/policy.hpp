#pragma once

// Text-generating policies behind one sampling contract: a scripted mock,
// and the trainable two-decision toy policy. The remote HTTP provider lives
// in remote_provider.hpp.

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "semloop/data_model.hpp"
#include "semloop/random.hpp"

namespace semloop {

struct SampleRequest {
  std::string prompt;
  std::size_t n = 1;
  double temperature = 1.0;
  std::size_t max_tokens = 1024;
  std::optional<std::uint64_t> seed;
};

enum class PolicyStage { Abstraction, Inference };

// One categorical choice made by a trainable policy.
struct Decision {
  PolicyStage stage;
  std::size_t context;
  std::size_t choice;

  friend bool operator==(const Decision&, const Decision&) = default;
};

struct Completion {
  std::string text;
  std::optional<double> logprob;    // trainable policies only; <= 0
  std::vector<Decision> decisions;  // trainable policies only
};

class Provider {
 public:
  virtual ~Provider() = default;

  // Returns exactly req.n completions. Must tolerate concurrent callers.
  virtual std::vector<Completion> sample(const SampleRequest& req) = 0;
  virtual bool require_think_tags() const = 0;
  virtual std::string name() const = 0;
};

// Replays scripted completions in order, or answers through a callback.
class MockProvider : public Provider {
 public:
  using Responder = std::function<std::string(const SampleRequest&, std::size_t index)>;

  explicit MockProvider(std::vector<std::string> script, bool require_tags = false);
  explicit MockProvider(Responder responder, bool require_tags = false);

  std::vector<Completion> sample(const SampleRequest& req) override;
  bool require_think_tags() const override { return require_tags_; }
  std::string name() const override { return "mock"; }

  std::size_t calls() const;

 private:
  mutable std::mutex mu_;
  std::deque<std::string> script_;
  Responder responder_;
  bool require_tags_;
  std::size_t calls_ = 0;
};

// Logits of the toy policy. Stage 1 picks a summary template per signal
// bucket; stage 2 picks a score per summary context.
struct ToyPolicyParams {
  Eigen::MatrixXd stage1_logits;  // buckets x templates
  Eigen::MatrixXd stage2_logits;  // contexts x 7 scores

  static ToyPolicyParams uniform(std::size_t buckets, std::size_t templates);

  std::size_t buckets() const { return static_cast<std::size_t>(stage1_logits.rows()); }
  std::size_t templates() const { return static_cast<std::size_t>(stage1_logits.cols()); }
  std::size_t contexts() const { return static_cast<std::size_t>(stage2_logits.rows()); }

  // Throws ShapeMismatch / InvalidConfig when the invariants do not hold.
  void validate() const;

  friend bool operator==(const ToyPolicyParams& a, const ToyPolicyParams& b) {
    return a.stage1_logits.rows() == b.stage1_logits.rows() &&
           a.stage1_logits.cols() == b.stage1_logits.cols() &&
           a.stage2_logits.rows() == b.stage2_logits.rows() &&
           a.stage2_logits.cols() == b.stage2_logits.cols() &&
           a.stage1_logits == b.stage1_logits && a.stage2_logits == b.stage2_logits;
  }
};

// Number of stage-2 contexts for B buckets and M templates: M*B + 1.
inline std::size_t toy_context_count(std::size_t buckets, std::size_t templates) {
  return templates * buckets + 1;
}

// Frozen copy of the parameters taken when training starts.
class ReferencePolicy {
 public:
  explicit ReferencePolicy(ToyPolicyParams params) : params_(std::move(params)) {}
  const ToyPolicyParams& params() const noexcept { return params_; }

 private:
  const ToyPolicyParams params_;
};

struct VisitedContexts {
  std::set<std::size_t> stage1;
  std::set<std::size_t> stage2;

  bool empty() const { return stage1.empty() && stage2.empty(); }
};

// Softmax of logits / temperature; temperature 0 is a point mass on the
// argmax (lowest index wins ties).
std::vector<double> softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits,
                            double temperature = 1.0);

// Mean over visited contexts of KL(softmax(params) || softmax(ref)).
double toy_kl(const ToyPolicyParams& params, const ReferencePolicy& ref,
              const VisitedContexts& visited);

// params + lr * gradient. Throws ShapeMismatch.
ToyPolicyParams toy_apply_update(const ToyPolicyParams& params, const ToyPolicyParams& gradient,
                                 double lr);

struct ToyConfig {
  std::size_t buckets = 8;
  std::size_t templates = 4;
  std::string signal_feature;
  double range_lo = 0.0;
  double range_hi = 1.0;
  // Wrap completions in a <think> block, as reasoning models do.
  bool emit_think = false;
  bool require_think_tags = false;
};

// Trainable categorical policy standing in for a shared two-stage LM.
//
// Stage 1 reads the signal feature back out of the Stage-1 prompt, buckets
// its window mean into one of B equal-width buckets over [range_lo,
// range_hi), and samples one of M summary templates. Template 0 states the
// bucket. Templates 1..M-1 are lossy: they carry a generic sentence plus an
// "overall impression" qualifier drawn uniformly at random, which says
// nothing about the window.
//
// Stage 2 derives its context from the summary text alone (template id and
// whatever number the summary states) and samples a score 0..6.
class ToyPolicy : public Provider {
 public:
  ToyPolicy(FeatureSchema schema, ToyConfig cfg);
  ToyPolicy(FeatureSchema schema, ToyConfig cfg, ToyPolicyParams init);

  std::vector<Completion> sample(const SampleRequest& req) override;
  bool require_think_tags() const override { return cfg_.require_think_tags; }
  std::string name() const override { return "toy"; }

  const ToyConfig& config() const noexcept { return cfg_; }
  const FeatureSchema& schema() const noexcept { return schema_; }

  std::shared_ptr<const ToyPolicyParams> params() const;
  void set_params(ToyPolicyParams p);

  // Bucket of the signal feature's window mean. Throws UnparseablePrompt.
  std::size_t bucketize_stage1(std::string_view prompt) const;
  // Mean of the signal feature's recorded values in a Stage-1 prompt.
  double signal_mean(std::string_view prompt) const;

  Completion generate_stage1(std::size_t bucket, const ToyPolicyParams& params,
                             double temperature, Rng& rng) const;
  Completion generate_stage2(std::string_view summary, const ToyPolicyParams& params,
                             double temperature, Rng& rng) const;

  // Summary text for a template; `qualifier` is ignored for template 0.
  std::string summary_text(std::size_t templ, std::size_t bucket, std::size_t qualifier) const;
  std::size_t stage2_context(std::string_view summary) const;
  std::size_t uninformative_context() const { return toy_context_count(cfg_.buckets, cfg_.templates) - 1; }

 private:
  std::string wrap(std::string body) const;

  FeatureSchema schema_;
  ToyConfig cfg_;
  std::string signal_label_;
  std::string signal_unit_;
  mutable std::mutex mu_;
  std::shared_ptr<const ToyPolicyParams> params_;
  mutable Rng fallback_rng_{0x5eed};
};

}  // namespace semloop
