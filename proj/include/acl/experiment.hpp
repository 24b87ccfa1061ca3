#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "acl/dataset.hpp"
#include "acl/engine.hpp"
#include "acl/stream.hpp"

namespace acl {

// Label selector for evaluation suites: "all", "train", "heldout",
// "task:<k>", or an explicit list of label ids.
struct SuiteSpec {
  std::string name;
  nlohmann::json classes = "all";
  nlohmann::json candidates = "all";
};

struct ExperimentConfig {
  std::optional<std::string> dataset_path;
  SyntheticSpec synthetic;
  Protocol protocol = Protocol::ClassIncremental;
  StreamConfig stream;
  std::vector<std::int32_t> heldout_labels;
  std::vector<SuiteSpec> suites;
  bool task_suites = false;
  EngineConfig engine;
  std::uint64_t seed = 0;

  // Unknown keys and out-of-range values raise ConfigError naming the field.
  static ExperimentConfig from_json(const nlohmann::json& j);
  // Every field with defaults filled in; keys sorted.
  nlohmann::json canonical() const;
  std::string hash() const;
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SyntheticSpec& spec);

// FNV-1a 64 of a canonical JSON dump, as 16 hex digits.
std::string canonical_hash(const nlohmann::json& canonical);

Dataset load_or_generate(const ExperimentConfig& config);
std::vector<EvalSuite> build_suites(const Dataset& dataset, const ExperimentConfig& config);

struct ExperimentResult {
  MetricsRecord metrics;
  std::optional<MtilMetrics> mtil;
  DecoderParams final_decoder;
  ClassAccuracyTracker tracker;
};

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& dataset);

// metrics.csv, summary.json, tracker.csv, decoder.ckpt. Files written before a
// failure are removed.
void write_experiment_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                              const std::string& out_dir);

}  // namespace acl
