#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "acl/errors.hpp"
#include "acl/experiment.hpp"

using namespace acl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string config_error_field(const json& j) {
  try {
    ExperimentConfig::from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

json small_config() {
  return json::parse(R"({
    "seed": 4,
    "synthetic": {"num_classes": 6, "samples_per_class": 10, "test_samples_per_class": 5, "dim": 16,
                  "num_tokens": 4, "sigma": 0.2, "domain_shift": 0.8},
    "protocol": "class_incremental",
    "class_groups": 3,
    "heldout_labels": [5],
    "suites": [{"name": "seen", "classes": "train", "candidates": "all"},
               {"name": "unseen", "classes": "heldout", "candidates": "heldout"}],
    "sampler": {"strategy": "class_balanced", "batch_size": 8}
  })");
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "acl_test_experiment" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("an empty config takes every default") {
  const auto c = ExperimentConfig::from_json(json::object());
  CHECK(c.seed == 0);
  CHECK(c.protocol == Protocol::ClassIncremental);
  CHECK(c.engine.weighting == WeightingStrategy::OCW);
  CHECK(c.engine.sampler.strategy == SamplerStrategy::FWS);
  CHECK(c.engine.sampler.batch_size == 32);
  CHECK(c.engine.compression.mode == CompressionMode::None);
  CHECK(c.stream.fractions_percent == std::vector<int>{2, 4, 8, 16, 32, 64, 100});
  const json canon = c.canonical();
  for (const char* key : {"seed", "synthetic", "protocol", "sampler", "optimizer", "compression", "weighting", "beta"})
    CHECK(canon.contains(key));
}

TEST_CASE("the seed propagates to the engine, sampler and generator") {
  const auto c = ExperimentConfig::from_json(json{{"seed", 17}});
  CHECK(c.engine.seed == 17);
  CHECK(c.engine.sampler.seed == 17);
  CHECK(c.synthetic.seed == 17);
  const auto d = ExperimentConfig::from_json(json{{"seed", 17}, {"synthetic", {{"seed", 3}}}});
  CHECK(d.synthetic.seed == 3);
}

TEST_CASE("unknown keys are rejected with the full field path") {
  CHECK(config_error_field(json{{"bogus", 1}}) == "bogus");
  CHECK(config_error_field(json{{"optimizer", {{"lrr", 0.1}}}}) == "optimizer.lrr");
  CHECK(config_error_field(json{{"sampler", {{"size", 4}}}}) == "sampler.size");
  CHECK(config_error_field(json{{"synthetic", {{"classes", 4}}}}) == "synthetic.classes");
  CHECK(config_error_field(json{{"suites", {{{"name", "a"}, {"label", "all"}}}}}) == "suites[0].label");
}

TEST_CASE("bad values name the offending field") {
  CHECK(config_error_field(json{{"beta", -1.0}}) == "beta");
  CHECK(config_error_field(json{{"eta", 1.0}}) == "eta");
  CHECK(config_error_field(json{{"optimizer", {{"lr", 0.0}}}}) == "optimizer.lr");
  CHECK(config_error_field(json{{"seed", "seven"}}) == "seed");
  CHECK(config_error_field(json{{"protocol", "spiral"}}) == "protocol");
  CHECK(config_error_field(json{{"decoder", "mlp"}}) == "decoder");
  CHECK(config_error_field(json{{"class_groups", 0}}) == "class_groups");
  CHECK(config_error_field(json{{"synthetic", {{"sigma", -0.5}}}}) == "sigma");
  CHECK(config_error_field(json{{"compression", {{"rounding", "up"}}}}) == "compression.rounding");
  CHECK(config_error_field(json{{"compression", {{"dataset_components", 10}, {"chunk_size", 5}}}}) ==
        "compression.chunk_size");
  CHECK(config_error_field(json{{"suites", {{{"classes", "all"}}}}}) == "suites[0].name");
  CHECK(config_error_field(json::array()) == "<root>");
}

TEST_CASE("the canonical form is a fixed point and its hash ignores key order") {
  const auto a = ExperimentConfig::from_json(small_config());
  const auto b = ExperimentConfig::from_json(a.canonical());
  CHECK(b.canonical() == a.canonical());
  CHECK(b.hash() == a.hash());
  CHECK(a.hash().size() == 16);

  // same content written in another order
  const json reordered = json::parse(small_config().dump());
  CHECK(ExperimentConfig::from_json(reordered).hash() == a.hash());

  json changed = small_config();
  changed["beta"] = 0.2;
  CHECK(ExperimentConfig::from_json(changed).hash() != a.hash());
  // explicit defaults hash like omitted ones
  json explicit_default = small_config();
  explicit_default["beta"] = 0.1;
  CHECK(ExperimentConfig::from_json(explicit_default).hash() == a.hash());
}

TEST_CASE("canonical_hash is FNV-1a of the compact dump") {
  CHECK(canonical_hash(json::object()) == hex64(fnv1a64(std::string_view("{}"))));
  CHECK(hex64(fnv1a64(std::string_view(""))) == "cbf29ce484222325");
  CHECK(hex64(fnv1a64(std::string_view("a"))) == "af63dc4c8601ec8c");
}

TEST_CASE("suites select test samples by label selector") {
  auto cfg = ExperimentConfig::from_json(small_config());
  const Dataset ds = load_or_generate(cfg);
  const auto suites = build_suites(ds, cfg);
  REQUIRE(suites.size() == 2);
  CHECK(suites[0].name == "seen");
  CHECK(suites[0].samples.size() == 25);
  CHECK(suites[0].candidates.size() == 6);
  CHECK(suites[1].samples.size() == 5);
  CHECK(suites[1].candidates == LabelSet{LabelId{5}});
  for (std::size_t i : suites[0].samples) {
    CHECK(ds.samples[i].split == Split::Test);
    CHECK(ds.samples[i].label != LabelId{5});
  }

  cfg.suites.clear();
  const auto fallback = build_suites(ds, cfg);
  REQUIRE(fallback.size() == 1);
  CHECK(fallback[0].name == "all");
  CHECK(fallback[0].samples.size() == 30);

  cfg.suites = {SuiteSpec{"ids", json::array({0, 2}), json::array({0, 1, 2})}};
  CHECK(build_suites(ds, cfg)[0].samples.size() == 10);
  cfg.suites = {SuiteSpec{"bad", json::array({0, 3}), json::array({0, 1})}};
  CHECK_THROWS_AS(build_suites(ds, cfg), ConfigError);
  cfg.suites = {SuiteSpec{"bad", "task:9", "all"}};
  CHECK_THROWS_AS(build_suites(ds, cfg), ConfigError);
  cfg.suites = {SuiteSpec{"bad", json::array({42}), "all"}};
  CHECK_THROWS_AS(build_suites(ds, cfg), ConfigError);
  cfg.suites.clear();
  cfg.heldout_labels = {99};
  CHECK_THROWS_AS(build_suites(ds, cfg), ConfigError);
}

TEST_CASE("frozen-only experiments never change their accuracy") {
  json j = small_config();
  j["weighting"] = "frozen_only";
  const auto cfg = ExperimentConfig::from_json(j);
  const auto result = run_experiment(cfg, load_or_generate(cfg));
  CHECK(result.metrics.num_stages() == 4);
  for (const char* suite : {"seen", "unseen"})
    for (int s = 1; s < 4; ++s) CHECK(result.metrics.accuracy(s, suite) == result.metrics.accuracy(0, suite));
}

TEST_CASE("task-incremental experiments report MTIL metrics") {
  json j = small_config();
  j["protocol"] = "task_incremental";
  j["synthetic"]["num_tasks"] = 3;
  j["task_suites"] = true;
  j.erase("suites");
  j.erase("heldout_labels");
  const auto cfg = ExperimentConfig::from_json(j);
  const auto result = run_experiment(cfg, load_or_generate(cfg));
  REQUIRE(result.mtil.has_value());
  Eigen::MatrixXd acc(3, 3);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k) acc(i, k) = result.metrics.accuracy(i + 1, "task:" + std::to_string(k));
  CHECK(result.mtil->last == doctest::Approx(acc.row(2).mean()));
}

TEST_CASE("experiment outputs are written once and reproduced byte for byte") {
  const auto cfg = ExperimentConfig::from_json(small_config());
  const Dataset ds = load_or_generate(cfg);
  const fs::path a = scratch("a"), b = scratch("b");
  write_experiment_outputs(cfg, run_experiment(cfg, ds), a.string());
  write_experiment_outputs(cfg, run_experiment(cfg, ds), b.string());
  for (const char* file : {"metrics.csv", "summary.json", "tracker.csv", "decoder.ckpt"}) {
    REQUIRE(fs::exists(a / file));
    CHECK(slurp(a / file) == slurp(b / file));
  }
  const std::string metrics = slurp(a / "metrics.csv");
  CHECK(metrics.rfind("config_hash,seed,stage,suite,accuracy\n" + cfg.hash() + ",4,0,seen,", 0) == 0);
  const json summary = json::parse(slurp(a / "summary.json"));
  CHECK(summary["config_hash"] == cfg.hash());
  CHECK(summary["final_stage"] == 3);
  CHECK(summary["final_accuracy"].contains("unseen"));
  std::string meta;
  load_decoder((a / "decoder.ckpt").string(), &meta);
  CHECK(meta == "config_hash=" + cfg.hash() + ";seed=4");
  std::ifstream tracker(a / "tracker.csv");
  CHECK_NOTHROW(ClassAccuracyTracker::read_csv(tracker));
}
