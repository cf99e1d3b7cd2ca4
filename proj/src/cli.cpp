#include "semloop/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "semloop/random.hpp"

namespace semloop {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_key(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::InvalidConfig, "config key '" + key + "': " + why);
}

// Typed access to one JSON object with dotted key paths in error messages.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad_key(path_, "expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  std::string key(const char* k) const { return path_.empty() ? k : path_ + "." + k; }

  template <typename T>
  std::optional<T> opt(const char* k) const {
    auto it = j_.find(k);
    if (it == j_.end()) return std::nullopt;
    try {
      return it->template get<T>();
    } catch (const json::exception&) {
      bad_key(key(k), "wrong type");
    }
  }

  template <typename T>
  T req(const char* k) const {
    auto v = opt<T>(k);
    if (!v) throw Error(ErrorCode::InvalidConfig, "missing config key '" + key(k) + "'");
    return *v;
  }

  template <typename T>
  void get(const char* k, T& into) const {
    if (auto v = opt<T>(k)) into = *v;
  }

  Section sub(const char* k) const { return Section(j_.at(k), key(k)); }
  const json& raw(const char* k) const { return j_.at(k); }

 private:
  const json& j_;
  std::string path_;
};

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string resolve_path(const std::string& p, const std::string& base) {
  fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

std::pair<double, double> range_of(const Section& s, const char* k) {
  auto v = s.req<std::vector<double>>(k);
  if (v.size() != 2 || !(v[0] < v[1])) bad_key(s.key(k), "expected [lo, hi] with lo < hi");
  return {v[0], v[1]};
}

FeatureSchema parse_schema_entry(const json& j, const std::string& base) {
  if (j.is_string()) return builtin_schema(j.get<std::string>());
  Section s(j, "schema");
  if (s.has("file")) return load_schema_file(resolve_path(s.req<std::string>("file"), base));
  return parse_schema_json(j.dump());
}

SynthConfig parse_synth(const Section& s, const FeatureSchema& schema) {
  SynthConfig c;
  c.schema = schema;
  s.get("subjects_per_subset", c.subjects_per_subset);
  s.get("weeks_per_subject", c.weeks_per_subject);
  s.get("subset_tags", c.subset_tags);
  c.signal_feature = s.req<std::string>("signal_feature");
  s.get("noise_scale", c.noise_scale);
  s.get("seed", c.seed);
  s.get("signal_slope", c.signal_slope);
  s.get("signal_intercept", c.signal_intercept);
  if (s.has("signal_range")) std::tie(c.signal_lo, c.signal_hi) = range_of(s, "signal_range");
  s.get("shift_scale", c.shift_scale);
  s.get("missing_rate", c.missing_rate);
  if (auto d = s.opt<std::string>("start_date")) {
    auto date = parse_iso_date(*d);
    if (!date) bad_key(s.key("start_date"), "expected YYYY-MM-DD");
    c.start_date = *date;
  }
  s.get("window_len", c.window_len);
  return c;
}

TrainConfig parse_train(const Section& s) {
  TrainConfig t;
  s.get("K", t.K);
  s.get("batch_samples", t.batch_samples);
  s.get("beta", t.beta);
  s.get("lr", t.lr);
  t.steps = s.req<std::size_t>("steps");
  s.get("epsilon", t.epsilon);
  s.get("temperature", t.temperature);
  s.get("seed", t.seed);
  s.get("checkpoint_every", t.checkpoint_every);
  s.get("max_tokens", t.max_tokens);
  s.get("jobs", t.jobs);
  t.validate();
  return t;
}

RemoteProviderConfig parse_provider(const Section& s) {
  RemoteProviderConfig p;
  p.base_url = s.req<std::string>("base_url");
  p.model = s.req<std::string>("model");
  s.get("temperature", p.temperature);
  s.get("max_tokens", p.max_tokens);
  s.get("require_think_tags", p.require_think_tags);
  s.get("supports_n", p.supports_n);
  s.get("timeout_s", p.timeout_s);
  s.get("max_retries", p.max_retries);
  if (auto ms = s.opt<std::int64_t>("backoff_ms")) p.backoff = std::chrono::milliseconds(*ms);
  p.api_key = api_key_from_env();
  return p;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw Error(ErrorCode::IoError, "cannot create output directory " + dir);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + p.string());
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "write failed: " + p.string());
}

void write_manifest(const RunConfig& cfg, const std::string& command, json extra) {
  extra["command"] = command;
  extra["config_hash"] = cfg.hash;
  extra["config"] = cfg.source;
  write_text(fs::path(cfg.out) / "manifest.json", extra.dump(2) + "\n");
}

std::string file_safe(std::string s) {
  for (auto& c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.')) c = '_';
  return s;
}

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::IoError, "cannot open " + path);
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidConfig, path + ": " + e.what());
  }
}

}  // namespace

RunConfig parse_run_config(json j, const Overrides& ov, const std::string& base_dir) {
  if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
  if (ov.task) j["task"] = *ov.task;
  if (ov.seed) {
    if (j.contains("data") && j["data"].is_object() && j["data"].contains("synth"))
      j["data"]["synth"]["seed"] = *ov.seed;
    if (j.contains("train")) j["train"]["seed"] = *ov.seed;
    j["eval"]["seed"] = *ov.seed;
  }
  if (ov.out) j["out"] = *ov.out;

  RunConfig c;
  c.source = j;
  json hashed = j;
  hashed.erase("out");
  c.hash = hex64(fnv1a64(hashed.dump()));

  const Section root(j, "");
  try {
    if (root.has("schema")) c.schema = parse_schema_entry(root.raw("schema"), base_dir);
    if (auto t = root.opt<std::string>("task")) c.task = parse_task(*t);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidConfig) throw;
    throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
  }

  const Section data = root.sub("data");
  if (data.has("synth") == (data.has("features") || data.has("labels")))
    bad_key("data", "give exactly one of 'synth' or 'features'+'labels'");
  if (data.has("synth")) {
    c.synth = parse_synth(data.sub("synth"), c.schema);
  } else {
    DataPaths p;
    p.features = resolve_path(data.req<std::string>("features"), base_dir);
    p.labels = resolve_path(data.req<std::string>("labels"), base_dir);
    data.get("window_len", p.load.window_len);
    data.get("min_coverage", p.load.min_coverage);
    data.get("include_label_day", p.load.include_label_day);
    c.paths = p;
  }

  if (root.has("reward")) root.sub("reward").get("sigma", c.reward.sigma);
  c.reward.validate();

  if (root.has("train")) c.train = parse_train(root.sub("train"));

  if (root.has("toy")) {
    const Section t = root.sub("toy");
    t.get("buckets", c.toy.buckets);
    t.get("templates", c.toy.templates);
    t.get("signal_feature", c.toy.signal_feature);
    if (t.has("range")) std::tie(c.toy.range_lo, c.toy.range_hi) = range_of(t, "range");
    else if (c.synth) std::tie(c.toy.range_lo, c.toy.range_hi) = synth_signal_range(*c.synth);
    t.get("emit_think", c.toy.emit_think);
    t.get("require_think_tags", c.toy.require_think_tags);
  } else if (c.synth) {
    std::tie(c.toy.range_lo, c.toy.range_hi) = synth_signal_range(*c.synth);
  }
  if (c.toy.signal_feature.empty() && c.synth) c.toy.signal_feature = c.synth->signal_feature;

  if (root.has("provider")) c.provider = parse_provider(root.sub("provider"));

  if (root.has("eval")) {
    const Section e = root.sub("eval");
    e.get("bootstrap", c.eval.bootstrap);
    e.get("seed", c.eval.seed);
    e.get("jobs", c.eval.jobs);
  }
  if (c.eval.bootstrap < 1) bad_key("eval.bootstrap", "must be >= 1");
  root.get("out", c.out);

  if (ov.jobs) {
    if (*ov.jobs < 1) throw Error(ErrorCode::InvalidConfig, "--jobs must be >= 1");
    c.eval.jobs = *ov.jobs;
    if (c.train) c.train->jobs = *ov.jobs;
  }
  return c;
}

RunConfig load_run_config(const std::string& path, const Overrides& ov) {
  const auto base = fs::path(path).parent_path().string();
  return parse_run_config(read_json_file(path), ov, base.empty() ? "." : base);
}

Dataset resolve_dataset(const RunConfig& cfg) {
  if (cfg.synth) return gen_synthetic(*cfg.synth);
  return load_dataset(cfg.paths->features, cfg.paths->labels, cfg.schema, cfg.paths->load);
}

std::size_t cmd_gen_synth(const RunConfig& cfg, std::ostream& log) {
  if (!cfg.synth) throw Error(ErrorCode::InvalidConfig, "missing config key 'data.synth'");
  const Dataset d = gen_synthetic(*cfg.synth);
  ensure_dir(cfg.out);
  const fs::path dir(cfg.out);
  write_dataset_csv(d, (dir / "features.csv").string(), (dir / "labels.csv").string());
  write_manifest(cfg, "gen-synth", {{"samples", d.samples.size()}, {"subsets", d.subsets()}});
  log << "wrote " << d.samples.size() << " samples to " << cfg.out << "\n";
  return d.samples.size();
}

TrainResult cmd_train_toy(const RunConfig& cfg, std::ostream& log) {
  if (!cfg.train) throw Error(ErrorCode::InvalidConfig, "missing config key 'train'");
  if (cfg.toy.signal_feature.empty())
    throw Error(ErrorCode::InvalidConfig, "missing config key 'toy.signal_feature'");
  const Dataset d = resolve_dataset(cfg);
  ensure_dir(cfg.out);
  const fs::path dir(cfg.out);

  ToyPolicy policy(d.schema, cfg.toy);
  auto save = [&](const fs::path& p, const ToyPolicyParams& params) {
    write_text(p, checkpoint_json(params, cfg.toy, cfg.hash, cfg.train->seed).dump(2) + "\n");
  };
  auto result = train(d, cfg.task, *cfg.train, cfg.reward, policy,
                      [&](std::size_t step, const ToyPolicyParams& p) {
                        save(dir / ("checkpoint_step" + std::to_string(step) + ".json"), p);
                      });
  save(dir / "checkpoint.json", result.params);
  {
    std::ofstream f(dir / "learning_curve.csv");
    if (!f) throw Error(ErrorCode::IoError, "cannot write learning_curve.csv");
    write_learning_curve_csv(result.curve, f);
  }
  json extra = {{"steps", cfg.train->steps}, {"samples", d.samples.size()}};
  if (result.stable_step) extra["stable_step"] = *result.stable_step;
  write_manifest(cfg, "train-toy", extra);

  char line[160];
  if (result.curve.empty()) {
    std::snprintf(line, sizeof line, "trained 0 steps; final mean reward n/a\n");
  } else {
    std::snprintf(line, sizeof line, "trained %zu steps; final mean reward %.4f\n",
                  result.curve.size(), result.curve.back().mean_reward);
  }
  log << line;
  return result;
}

nlohmann::json cmd_run_loso(const RunConfig& cfg, const std::vector<std::string>& predictors,
                            const std::optional<std::string>& checkpoint, std::ostream& log) {
  const Dataset d = resolve_dataset(cfg);
  const auto folds = split_loso(d);

  std::vector<std::unique_ptr<Predictor>> owned;
  std::unique_ptr<RemoteProvider> remote;
  for (const auto& name : predictors.empty() ? std::vector<std::string>{"mean-baseline"} : predictors) {
    if (name == "mean-baseline") {
      owned.push_back(std::make_unique<MeanBaseline>());
    } else if (name == "linear-baseline") {
      owned.push_back(std::make_unique<LinearBaseline>());
    } else if (name == "toy") {
      if (cfg.toy.signal_feature.empty())
        throw Error(ErrorCode::InvalidConfig, "missing config key 'toy.signal_feature'");
      if (checkpoint) {
        owned.push_back(std::make_unique<ToyPredictor>(cfg.toy, params_from_checkpoint(read_json_file(*checkpoint))));
      } else {
        if (!cfg.train) throw Error(ErrorCode::InvalidConfig, "missing config key 'train' (or pass --checkpoint)");
        owned.push_back(std::make_unique<ToyPredictor>(cfg.toy, *cfg.train, cfg.reward));
      }
    } else if (name == "remote") {
      if (!cfg.provider) throw Error(ErrorCode::InvalidConfig, "missing config key 'provider'");
      remote = std::make_unique<RemoteProvider>(*cfg.provider);
      owned.push_back(std::make_unique<ProviderPredictor>(*remote, cfg.provider->temperature,
                                                          cfg.provider->max_tokens));
    } else {
      throw Error(ErrorCode::UnknownName, "unknown predictor '" + name + "'");
    }
  }
  std::vector<Predictor*> ptrs;
  for (auto& p : owned) ptrs.push_back(p.get());

  const auto report = run_loso(d, folds, cfg.task, ptrs, cfg.eval);
  auto j = report_json(report, cfg.hash);

  ensure_dir(cfg.out);
  const fs::path dir(cfg.out);
  write_text(dir / "report.json", j.dump(2) + "\n");
  for (const auto& m : report.methods) {
    std::ofstream f(dir / ("predictions_" + file_safe(m.predictions.method) + ".csv"));
    if (!f) throw Error(ErrorCode::IoError, "cannot write predictions CSV");
    write_predictions_csv(m, d, f);
  }
  write_report_table(j, log);
  return j;
}

nlohmann::json cmd_eval_provider(const RunConfig& cfg, std::ostream& log) {
  return cmd_run_loso(cfg, {"remote", "mean-baseline"}, std::nullopt, log);
}

void cmd_report(const std::string& report_path, std::ostream& log) {
  write_report_table(read_json_file(report_path), log);
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage summarize-then-predict pipeline: synthetic data, GRPO toy training, LOSO evaluation"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out_dir;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--seed", seed, "Seed for data generation, training and evaluation");
  app.add_option("--task", task, "anxiety or depression")->check(CLI::IsMember({"anxiety", "depression"}));
  app.add_option("--jobs", jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "Output directory (overrides the config's 'out')");

  auto* gen = app.add_subcommand("gen-synth", "Write a synthetic features.csv/labels.csv pair");
  auto* trn = app.add_subcommand("train-toy", "Train the toy policy with GRPO");
  auto* loso = app.add_subcommand("run-loso", "Leave-one-subset-out evaluation");
  std::vector<std::string> predictors;
  std::optional<std::string> checkpoint;
  loso->add_option("--predictor", predictors, "toy, mean-baseline, linear-baseline or remote (repeatable)")
      ->check(CLI::IsMember({"toy", "mean-baseline", "linear-baseline", "remote"}));
  loso->add_option("--checkpoint", checkpoint, "Toy checkpoint; without it the toy trains per fold");
  auto* evp = app.add_subcommand("eval-provider", "Evaluate the remote provider against the mean baseline");
  auto* rep = app.add_subcommand("report", "Render a report.json as a table");
  std::string report_path;
  rep->add_option("report", report_path, "Path to report.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (rep->parsed()) {
      cmd_report(report_path, out);
      return 0;
    }
    if (config_path.empty()) throw Error(ErrorCode::InvalidConfig, "--config is required");
    const auto cfg = load_run_config(config_path, Overrides{seed, task, jobs, out_dir});
    if (gen->parsed()) cmd_gen_synth(cfg, out);
    else if (trn->parsed()) cmd_train_toy(cfg, out);
    else if (loso->parsed()) cmd_run_loso(cfg, predictors, checkpoint, out);
    else if (evp->parsed()) cmd_eval_provider(cfg, out);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace semloop
