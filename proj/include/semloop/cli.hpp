#pragma once

// Command implementations behind the `semloop` executable. Each command is
// callable in-process; run_cli() adds argument parsing on top.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "semloop/eval.hpp"
#include "semloop/grpo.hpp"
#include "semloop/ingest.hpp"
#include "semloop/remote_provider.hpp"

namespace semloop {

struct DataPaths {
  std::string features;
  std::string labels;
  LoadOptions load;
};

struct RunConfig {
  nlohmann::json source;  // the config after flag overrides
  std::string hash;       // FNV-1a of `source`, 16 hex digits
  FeatureSchema schema = builtin_schema(SchemaName::GLOBEM);
  TaskKind task = TaskKind::Anxiety;
  std::optional<SynthConfig> synth;  // exactly one of synth / paths
  std::optional<DataPaths> paths;
  RewardSpec reward;
  std::optional<TrainConfig> train;
  ToyConfig toy;
  std::optional<RemoteProviderConfig> provider;
  EvalConfig eval;
  std::string out = "out";
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> task;
  std::optional<std::size_t> jobs;
  std::optional<std::string> out;
};

// Throws InvalidConfig naming the offending key. Relative file paths are
// resolved against `base_dir`.
RunConfig parse_run_config(nlohmann::json j, const Overrides& ov = {},
                           const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path, const Overrides& ov = {});

Dataset resolve_dataset(const RunConfig& cfg);

// Each command writes its artifacts under cfg.out and a one-line summary to `log`.
std::size_t cmd_gen_synth(const RunConfig& cfg, std::ostream& log);
TrainResult cmd_train_toy(const RunConfig& cfg, std::ostream& log);
// predictors: any of toy, mean-baseline, linear-baseline, remote. `toy` uses
// `checkpoint` when given and otherwise trains on each fold's train split.
nlohmann::json cmd_run_loso(const RunConfig& cfg, const std::vector<std::string>& predictors,
                            const std::optional<std::string>& checkpoint, std::ostream& log);
nlohmann::json cmd_eval_provider(const RunConfig& cfg, std::ostream& log);
void cmd_report(const std::string& report_path, std::ostream& log);

// Returns the process exit code.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

}  // namespace semloop
