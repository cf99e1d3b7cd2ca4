#include "semloop/policy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "semloop/prompting.hpp"

namespace semloop {

// ---------------------------------------------------------------- mock

MockProvider::MockProvider(std::vector<std::string> script, bool require_tags)
    : script_(script.begin(), script.end()), require_tags_(require_tags) {}

MockProvider::MockProvider(Responder responder, bool require_tags)
    : responder_(std::move(responder)), require_tags_(require_tags) {}

std::vector<Completion> MockProvider::sample(const SampleRequest& req) {
  std::lock_guard lock(mu_);
  ++calls_;
  std::vector<Completion> out;
  out.reserve(req.n);
  for (std::size_t k = 0; k < req.n; ++k) {
    if (responder_) {
      out.push_back({responder_(req, k), std::nullopt, {}});
      continue;
    }
    if (script_.empty())
      throw Error(ErrorCode::ProviderExhausted, "mock script ran out of completions");
    out.push_back({std::move(script_.front()), std::nullopt, {}});
    script_.pop_front();
  }
  return out;
}

std::size_t MockProvider::calls() const {
  std::lock_guard lock(mu_);
  return calls_;
}

// ---------------------------------------------------------------- params

ToyPolicyParams ToyPolicyParams::uniform(std::size_t buckets, std::size_t templates) {
  return {Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(buckets),
                                static_cast<Eigen::Index>(templates)),
          Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(toy_context_count(buckets, templates)),
                                Score::kLevels)};
}

void ToyPolicyParams::validate() const {
  if (buckets() < 2 || templates() < 2)
    throw Error(ErrorCode::InvalidConfig, "toy policy needs >= 2 buckets and >= 2 templates");
  if (stage2_logits.cols() != Score::kLevels || stage2_logits.rows() < 1)
    throw Error(ErrorCode::ShapeMismatch, "stage-2 logits must have 7 columns");
  if (!stage1_logits.allFinite() || !stage2_logits.allFinite())
    throw Error(ErrorCode::InvalidConfig, "toy logits must be finite");
}

std::vector<double> softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits,
                            double temperature) {
  const auto n = static_cast<std::size_t>(logits.size());
  std::vector<double> p(n, 0.0);
  if (temperature <= 0.0) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = i;
    p[static_cast<std::size_t>(best)] = 1.0;
    return p;
  }
  const double mx = logits.maxCoeff();
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp((logits[static_cast<Eigen::Index>(i)] - mx) / temperature);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

namespace {

double categorical_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  return std::max(kl, 0.0);
}

std::size_t draw(const std::vector<double>& p, Rng& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return i;
  }
  // Rounding left u above the final partial sum: take the last nonzero entry.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return i;
  return 0;
}

void check_same_shape(const ToyPolicyParams& a, const ToyPolicyParams& b) {
  if (a.stage1_logits.rows() != b.stage1_logits.rows() ||
      a.stage1_logits.cols() != b.stage1_logits.cols() ||
      a.stage2_logits.rows() != b.stage2_logits.rows() ||
      a.stage2_logits.cols() != b.stage2_logits.cols())
    throw Error(ErrorCode::ShapeMismatch, "toy parameter shapes differ");
}

}  // namespace

double toy_kl(const ToyPolicyParams& params, const ReferencePolicy& ref,
              const VisitedContexts& visited) {
  check_same_shape(params, ref.params());
  if (visited.empty()) return 0.0;
  double total = 0.0;
  for (auto c : visited.stage1) {
    const auto i = static_cast<Eigen::Index>(c);
    total += categorical_kl(softmax(params.stage1_logits.row(i)),
                            softmax(ref.params().stage1_logits.row(i)));
  }
  for (auto c : visited.stage2) {
    const auto i = static_cast<Eigen::Index>(c);
    total += categorical_kl(softmax(params.stage2_logits.row(i)),
                            softmax(ref.params().stage2_logits.row(i)));
  }
  return total / static_cast<double>(visited.stage1.size() + visited.stage2.size());
}

ToyPolicyParams toy_apply_update(const ToyPolicyParams& params, const ToyPolicyParams& gradient,
                                 double lr) {
  check_same_shape(params, gradient);
  return {params.stage1_logits + lr * gradient.stage1_logits,
          params.stage2_logits + lr * gradient.stage2_logits};
}

// ---------------------------------------------------------------- toy policy

namespace {

constexpr std::string_view kLossyPhrases[] = {
    "Daily routines looked broadly similar from one day to the next.",
    "Sleep and movement had some ups and downs without a clear direction.",
    "No single day stood out as unusual.",
};
constexpr std::string_view kBandInfix = " sat in level band ";
constexpr std::string_view kImpression = " Overall impression: ";
constexpr std::string_view kThinkPrefix = "<think>Summarizing the recorded period.</think>\n";

std::string lossy_phrase(std::size_t templ) {
  const std::size_t n = std::size(kLossyPhrases);
  if (templ - 1 < n) return std::string(kLossyPhrases[templ - 1]);
  return "Behavior followed pattern " + std::to_string(templ) + " with no clear trend.";
}

// Parses a positive decimal integer occupying all of `s`.
std::optional<std::size_t> parse_count(std::string_view s) {
  if (s.empty() || s.size() > 9) return std::nullopt;
  std::size_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) return std::nullopt;
  return v;
}

}  // namespace

ToyPolicy::ToyPolicy(FeatureSchema schema, ToyConfig cfg)
    : ToyPolicy(schema, cfg, ToyPolicyParams::uniform(cfg.buckets, cfg.templates)) {}

ToyPolicy::ToyPolicy(FeatureSchema schema, ToyConfig cfg, ToyPolicyParams init)
    : schema_(std::move(schema)), cfg_(std::move(cfg)) {
  if (cfg_.buckets < 2 || cfg_.templates < 2)
    throw Error(ErrorCode::InvalidConfig, "toy.buckets and toy.templates must be >= 2");
  if (!(cfg_.range_hi > cfg_.range_lo))
    throw Error(ErrorCode::InvalidConfig, "toy.range must satisfy lo < hi");
  const auto& spec = schema_.at(cfg_.signal_feature);
  signal_label_ = spec.label;
  signal_unit_ = spec.unit;
  const auto same_label = std::count_if(schema_.features().begin(), schema_.features().end(),
                                        [&](const auto& f) { return f.label == signal_label_; });
  if (same_label != 1)
    throw Error(ErrorCode::InvalidConfig, "signal feature label '" + signal_label_ +
                                              "' is not unique in the schema");
  init.validate();
  if (init.buckets() != cfg_.buckets || init.templates() != cfg_.templates ||
      init.contexts() != toy_context_count(cfg_.buckets, cfg_.templates))
    throw Error(ErrorCode::ShapeMismatch, "toy parameters do not match buckets/templates");
  params_ = std::make_shared<const ToyPolicyParams>(std::move(init));
}

std::shared_ptr<const ToyPolicyParams> ToyPolicy::params() const {
  std::lock_guard lock(mu_);
  return params_;
}

void ToyPolicy::set_params(ToyPolicyParams p) {
  p.validate();
  check_same_shape(p, *params());
  auto next = std::make_shared<const ToyPolicyParams>(std::move(p));
  std::lock_guard lock(mu_);
  params_ = std::move(next);
}

double ToyPolicy::signal_mean(std::string_view prompt) const {
  if (prompt.substr(0, stage1_grammar::kIntroPrefix.size()) != stage1_grammar::kIntroPrefix)
    throw Error(ErrorCode::UnparseablePrompt, "not a Stage-1 prompt");
  const std::string marker = "\n- " + signal_label_ + ": ";
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t pos = prompt.find(marker); pos != std::string_view::npos;
       pos = prompt.find(marker, pos + 1)) {
    const std::size_t begin = pos + marker.size();
    const std::size_t eol = prompt.find('\n', begin);
    const std::string_view rest = prompt.substr(begin, eol == std::string_view::npos ? eol : eol - begin);
    if (rest == stage1_grammar::kMissing) continue;
    const std::string suffix = " " + signal_unit_;
    if (rest.size() <= suffix.size() || rest.substr(rest.size() - suffix.size()) != suffix)
      throw Error(ErrorCode::UnparseablePrompt, "bad value line '" + std::string(rest) + "'");
    const std::string_view num = rest.substr(0, rest.size() - suffix.size());
    double v = 0.0;
    auto [p, ec] = std::from_chars(num.data(), num.data() + num.size(), v);
    if (ec != std::errc{} || p != num.data() + num.size())
      throw Error(ErrorCode::UnparseablePrompt, "bad number '" + std::string(num) + "'");
    sum += v;
    ++count;
  }
  if (count == 0)
    throw Error(ErrorCode::UnparseablePrompt, "no recorded values for '" + signal_label_ + "'");
  return sum / static_cast<double>(count);
}

std::size_t ToyPolicy::bucketize_stage1(std::string_view prompt) const {
  const double mean = signal_mean(prompt);
  // Half-open buckets [e_k, e_{k+1}); values outside the range clamp to the ends.
  std::size_t bucket = 0;
  for (std::size_t k = 1; k < cfg_.buckets; ++k) {
    const double edge = cfg_.range_lo + (cfg_.range_hi - cfg_.range_lo) *
                                            static_cast<double>(k) / static_cast<double>(cfg_.buckets);
    if (mean >= edge) bucket = k;
  }
  return bucket;
}

std::string ToyPolicy::summary_text(std::size_t templ, std::size_t bucket,
                                    std::size_t qualifier) const {
  if (templ == 0)
    return signal_label_ + std::string(kBandInfix) + std::to_string(bucket + 1) + " of " +
           std::to_string(cfg_.buckets) + " over the period.";
  return lossy_phrase(templ) + std::string(kImpression) + std::to_string(qualifier + 1) +
         " on a 1-" + std::to_string(cfg_.buckets) + " scale.";
}

std::size_t ToyPolicy::stage2_context(std::string_view summary) const {
  const std::size_t B = cfg_.buckets;
  const std::string band_head = signal_label_ + std::string(kBandInfix);
  const std::string band_tail = " of " + std::to_string(B) + " over the period.";
  if (summary.size() > band_head.size() + band_tail.size() &&
      summary.substr(0, band_head.size()) == band_head &&
      summary.substr(summary.size() - band_tail.size()) == band_tail) {
    const auto v = parse_count(summary.substr(band_head.size(),
                                              summary.size() - band_head.size() - band_tail.size()));
    if (v && *v >= 1 && *v <= B) return *v - 1;
  }
  const std::string imp_tail = " on a 1-" + std::to_string(B) + " scale.";
  for (std::size_t m = 1; m < cfg_.templates; ++m) {
    const std::string head = lossy_phrase(m) + std::string(kImpression);
    if (summary.size() > head.size() + imp_tail.size() && summary.substr(0, head.size()) == head &&
        summary.substr(summary.size() - imp_tail.size()) == imp_tail) {
      const auto v = parse_count(summary.substr(head.size(),
                                                summary.size() - head.size() - imp_tail.size()));
      if (v && *v >= 1 && *v <= B) return m * B + (*v - 1);
    }
  }
  return uninformative_context();
}

std::string ToyPolicy::wrap(std::string body) const {
  return cfg_.emit_think ? std::string(kThinkPrefix) + body : body;
}

Completion ToyPolicy::generate_stage1(std::size_t bucket, const ToyPolicyParams& params,
                                      double temperature, Rng& rng) const {
  const auto probs = softmax(params.stage1_logits.row(static_cast<Eigen::Index>(bucket)), temperature);
  const std::size_t templ = draw(probs, rng);
  std::size_t qualifier = 0;
  if (templ != 0 && temperature > 0.0) qualifier = uniform_index(rng, cfg_.buckets);
  return {wrap(summary_text(templ, bucket, qualifier)), std::log(probs[templ]),
          {{PolicyStage::Abstraction, bucket, templ}}};
}

Completion ToyPolicy::generate_stage2(std::string_view summary, const ToyPolicyParams& params,
                                      double temperature, Rng& rng) const {
  const std::size_t ctx = stage2_context(summary);
  const auto probs = softmax(params.stage2_logits.row(static_cast<Eigen::Index>(ctx)), temperature);
  const std::size_t s = draw(probs, rng);
  return {wrap("score: " + std::to_string(s)), std::log(probs[s]),
          {{PolicyStage::Inference, ctx, s}}};
}

std::vector<Completion> ToyPolicy::sample(const SampleRequest& req) {
  const auto snapshot = params();
  std::uint64_t seed = 0;
  if (req.seed) {
    seed = *req.seed;
  } else {
    std::lock_guard lock(mu_);
    seed = fallback_rng_();
  }
  Rng rng(seed);

  std::vector<Completion> out;
  out.reserve(req.n);
  if (req.prompt.starts_with(stage1_grammar::kIntroPrefix)) {
    const std::size_t bucket = bucketize_stage1(req.prompt);
    for (std::size_t k = 0; k < req.n; ++k)
      out.push_back(generate_stage1(bucket, *snapshot, req.temperature, rng));
    return out;
  }
  if (auto summary = summary_from_stage2_prompt(req.prompt)) {
    for (std::size_t k = 0; k < req.n; ++k)
      out.push_back(generate_stage2(*summary, *snapshot, req.temperature, rng));
    return out;
  }
  throw Error(ErrorCode::UnparseablePrompt, "prompt is neither Stage-1 nor Stage-2");
}

}  // namespace semloop
