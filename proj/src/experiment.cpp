#include "acl/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace acl {
namespace {

using nlohmann::json;

// Reads fields from one JSON object and rejects keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end() || it->is_null()) return fallback;
    try {
      return it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key), std::string("wrong type: ") + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() || it->is_null() ? nullptr : &*it;
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items())
      if (seen_.count(key) == 0) throw ConfigError(field(key), "unknown key");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const char* to_string(DecoderVariant v) { return v == DecoderVariant::Linear ? "linear" : "transformer_block"; }

DecoderVariant parse_decoder(const std::string& s) {
  if (s == "linear") return DecoderVariant::Linear;
  if (s == "transformer_block") return DecoderVariant::TransformerBlock;
  throw ConfigError("decoder", "unknown variant '" + s + "'");
}

LabelSet select_labels(const Dataset& ds, const json& selector, const LabelSet& train, const LabelSet& heldout,
                       const std::string& field) {
  if (selector.is_array()) {
    LabelSet out;
    for (const auto& v : selector) {
      if (!v.is_number_integer()) throw ConfigError(field, "label list must contain integers");
      const LabelId id{v.get<std::int32_t>()};
      if (!ds.table.contains(id)) throw ConfigError(field, "unknown label " + std::to_string(id.value));
      out.insert(id);
    }
    return out;
  }
  if (!selector.is_string()) throw ConfigError(field, "expected a selector string or label list");
  const auto s = selector.get<std::string>();
  if (s == "all") return ds.table.labels();
  if (s == "train") return train;
  if (s == "heldout") return heldout;
  if (s.rfind("task:", 0) == 0) {
    int task = -1;
    try {
      task = std::stoi(s.substr(5));
    } catch (const std::logic_error&) {
    }
    if (task < 0 || task >= ds.num_tasks()) throw ConfigError(field, "no such task '" + s + "'");
    return ds.labels_of_task(task);
  }
  throw ConfigError(field, "unknown selector '" + s + "'");
}

}  // namespace

SyntheticSpec synthetic_spec_from_json(const json& j) {
  ObjectReader r(j, "synthetic");
  SyntheticSpec s;
  s.num_classes = r.get("num_classes", s.num_classes);
  s.samples_per_class = r.get("samples_per_class", s.samples_per_class);
  s.test_samples_per_class = r.get("test_samples_per_class", s.test_samples_per_class);
  s.dim = r.get("dim", s.dim);
  s.num_tokens = r.get("num_tokens", s.num_tokens);
  s.sigma = r.get("sigma", s.sigma);
  s.separation = r.get("separation", s.separation);
  s.domain_shift = r.get("domain_shift", s.domain_shift);
  s.patch_spread = r.get("patch_spread", s.patch_spread);
  s.patch_rank = r.get("patch_rank", s.patch_rank);
  s.patch_noise = r.get("patch_noise", s.patch_noise);
  s.num_tasks = r.get("num_tasks", s.num_tasks);
  s.seed = r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

json to_json(const SyntheticSpec& s) {
  return json{{"num_classes", s.num_classes},
              {"samples_per_class", s.samples_per_class},
              {"test_samples_per_class", s.test_samples_per_class},
              {"dim", s.dim},
              {"num_tokens", s.num_tokens},
              {"sigma", s.sigma},
              {"separation", s.separation},
              {"domain_shift", s.domain_shift},
              {"patch_spread", s.patch_spread},
              {"patch_rank", s.patch_rank},
              {"patch_noise", s.patch_noise},
              {"num_tasks", s.num_tasks},
              {"seed", s.seed}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ObjectReader r(j, "");
  ExperimentConfig c;
  c.seed = r.get<std::uint64_t>("seed", 0);
  if (auto path = r.get<std::string>("dataset", ""); !path.empty()) c.dataset_path = path;
  if (const json* syn = r.child("synthetic")) {
    json s = *syn;
    if (s.is_object() && !s.contains("seed")) s["seed"] = c.seed;
    c.synthetic = synthetic_spec_from_json(s);
  } else {
    c.synthetic.seed = c.seed;
  }
  c.protocol = parse_protocol(r.get<std::string>("protocol", to_string(c.protocol)));
  c.stream.fractions_percent = r.get("fractions_percent", c.stream.fractions_percent);
  c.stream.class_groups = r.get("class_groups", c.stream.class_groups);
  if (c.stream.class_groups < 1) throw ConfigError("class_groups", "must be >= 1");
  c.heldout_labels = r.get("heldout_labels", c.heldout_labels);
  c.task_suites = r.get("task_suites", c.task_suites);
  if (const json* suites = r.child("suites")) {
    if (!suites->is_array()) throw ConfigError("suites", "expected a list");
    for (std::size_t i = 0; i < suites->size(); ++i) {
      ObjectReader sr((*suites)[i], "suites[" + std::to_string(i) + "]");
      SuiteSpec s;
      s.name = sr.get<std::string>("name", "");
      if (s.name.empty()) throw ConfigError(sr.field("name"), "must be non-empty");
      if (const json* v = sr.child("classes")) s.classes = *v;
      if (const json* v = sr.child("candidates")) s.candidates = *v;
      sr.finish();
      c.suites.push_back(std::move(s));
    }
  }

  auto& e = c.engine;
  e.decoder = parse_decoder(r.get<std::string>("decoder", to_string(e.decoder)));
  e.init_scale = r.get("init_scale", e.init_scale);
  e.beta = r.get("beta", e.beta);
  if (!(e.beta >= 0.0)) throw ConfigError("beta", "must be >= 0");
  e.eta = r.get("eta", e.eta);
  if (!(e.eta >= 0.0 && e.eta < 1.0)) throw ConfigError("eta", "must be in [0, 1)");
  e.weighting = parse_weighting_strategy(r.get<std::string>("weighting", to_string(e.weighting)));
  e.p_other_weighting = r.get("p_other_weighting", e.p_other_weighting);
  if (const json* s = r.child("sampler")) {
    ObjectReader sr(*s, "sampler");
    e.sampler.strategy = parse_sampler_strategy(sr.get<std::string>("strategy", to_string(e.sampler.strategy)));
    e.sampler.batch_size = sr.get("batch_size", e.sampler.batch_size);
    e.sampler.xi = sr.get("xi", e.sampler.xi);
    e.sampler.w_min = sr.get("w_min", e.sampler.w_min);
    sr.finish();
  }
  e.sampler.validate();
  if (const json* o = r.child("optimizer")) {
    ObjectReader orr(*o, "optimizer");
    e.optimizer.lr = orr.get("lr", e.optimizer.lr);
    e.optimizer.weight_decay = orr.get("weight_decay", e.optimizer.weight_decay);
    e.optimizer.beta1 = orr.get("beta1", e.optimizer.beta1);
    e.optimizer.beta2 = orr.get("beta2", e.optimizer.beta2);
    e.optimizer.eps = orr.get("eps", e.optimizer.eps);
    orr.finish();
    if (!(e.optimizer.lr > 0.0)) throw ConfigError("optimizer.lr", "must be > 0");
    if (!(e.optimizer.weight_decay >= 0.0)) throw ConfigError("optimizer.weight_decay", "must be >= 0");
    if (!(e.optimizer.beta1 >= 0.0 && e.optimizer.beta1 < 1.0)) throw ConfigError("optimizer.beta1", "must be in [0, 1)");
    if (!(e.optimizer.beta2 >= 0.0 && e.optimizer.beta2 < 1.0)) throw ConfigError("optimizer.beta2", "must be in [0, 1)");
    if (!(e.optimizer.eps > 0.0)) throw ConfigError("optimizer.eps", "must be > 0");
  }
  if (const json* k = r.child("compression")) {
    ObjectReader kr(*k, "compression");
    auto& cc = e.compression;
    cc.mode = parse_compression_mode(kr.get<std::string>("mode", to_string(cc.mode)));
    cc.components = kr.get("components", cc.components);
    cc.dataset_components = kr.get("dataset_components", cc.dataset_components);
    cc.chunk_size = kr.get("chunk_size", cc.chunk_size);
    cc.rescale_patch_weights = kr.get("rescale_patch_weights", cc.rescale_patch_weights);
    const auto rounding = kr.get<std::string>("rounding", "nearest");
    if (rounding == "nearest")
      cc.rounding = RoundingMode::Nearest;
    else if (rounding == "truncate")
      cc.rounding = RoundingMode::Truncate;
    else
      throw ConfigError("compression.rounding", "must be 'nearest' or 'truncate'");
    kr.finish();
    if (cc.components < 1) throw ConfigError("compression.components", "must be >= 1");
    if (cc.dataset_components < 1) throw ConfigError("compression.dataset_components", "must be >= 1");
    if (cc.chunk_size < static_cast<std::size_t>(cc.dataset_components))
      throw ConfigError("compression.chunk_size", "must be >= dataset_components");
  }
  r.finish();
  e.seed = c.seed;
  e.sampler.seed = c.seed;
  return c;
}

json ExperimentConfig::canonical() const {
  const auto& e = engine;
  json suites_json = json::array();
  for (const auto& s : suites) suites_json.push_back({{"name", s.name}, {"classes", s.classes}, {"candidates", s.candidates}});
  return json{
      {"dataset", dataset_path ? json(*dataset_path) : json(nullptr)},
      {"synthetic", to_json(synthetic)},
      {"protocol", to_string(protocol)},
      {"fractions_percent", stream.fractions_percent},
      {"class_groups", stream.class_groups},
      {"heldout_labels", heldout_labels},
      {"suites", suites_json},
      {"task_suites", task_suites},
      {"decoder", to_string(e.decoder)},
      {"init_scale", e.init_scale},
      {"beta", e.beta},
      {"eta", e.eta},
      {"weighting", to_string(e.weighting)},
      {"p_other_weighting", e.p_other_weighting},
      {"sampler",
       {{"strategy", to_string(e.sampler.strategy)},
        {"batch_size", e.sampler.batch_size},
        {"xi", e.sampler.xi},
        {"w_min", e.sampler.w_min}}},
      {"optimizer",
       {{"lr", e.optimizer.lr},
        {"weight_decay", e.optimizer.weight_decay},
        {"beta1", e.optimizer.beta1},
        {"beta2", e.optimizer.beta2},
        {"eps", e.optimizer.eps}}},
      {"compression",
       {{"mode", to_string(e.compression.mode)},
        {"components", e.compression.components},
        {"dataset_components", e.compression.dataset_components},
        {"chunk_size", e.compression.chunk_size},
        {"rescale_patch_weights", e.compression.rescale_patch_weights},
        {"rounding", e.compression.rounding == RoundingMode::Nearest ? "nearest" : "truncate"}}},
      {"seed", seed},
  };
}

std::string canonical_hash(const json& canonical) {
  return hex64(fnv1a64(canonical.dump()));
}

std::string ExperimentConfig::hash() const { return canonical_hash(canonical()); }

Dataset load_or_generate(const ExperimentConfig& config) {
  if (config.dataset_path) return load_dataset(*config.dataset_path);
  return generate(config.synthetic);
}

std::vector<EvalSuite> build_suites(const Dataset& ds, const ExperimentConfig& config) {
  LabelSet heldout;
  for (auto v : config.heldout_labels) {
    if (!ds.table.contains(LabelId{v})) throw ConfigError("heldout_labels", "unknown label " + std::to_string(v));
    heldout.insert(LabelId{v});
  }
  LabelSet train;
  for (LabelId y : ds.table.labels())
    if (heldout.count(y) == 0) train.insert(y);

  std::vector<EvalSuite> out;
  auto make = [&](std::string name, const LabelSet& classes, const LabelSet& candidates) {
    for (LabelId y : classes)
      if (candidates.count(y) == 0) throw ConfigError("suites", "suite '" + name + "' has classes outside its candidates");
    if (candidates.empty()) throw ConfigError("suites", "suite '" + name + "' has no candidates");
    EvalSuite s{std::move(name), {}, candidates};
    for (std::size_t i : ds.indices(Split::Test))
      if (classes.count(ds.samples[i].label) != 0) s.samples.push_back(i);
    out.push_back(std::move(s));
  };
  for (std::size_t i = 0; i < config.suites.size(); ++i) {
    const auto& spec = config.suites[i];
    const std::string field = "suites[" + std::to_string(i) + "]";
    make(spec.name, select_labels(ds, spec.classes, train, heldout, field + ".classes"),
         select_labels(ds, spec.candidates, train, heldout, field + ".candidates"));
  }
  if (config.task_suites) {
    if (ds.num_tasks() == 0) throw ConfigError("task_suites", "dataset has no task partition");
    for (std::int32_t t = 0; t < ds.num_tasks(); ++t) {
      const LabelSet labels = ds.labels_of_task(t);
      make("task:" + std::to_string(t), labels, labels);
    }
  }
  if (out.empty()) make("all", ds.table.labels(), ds.table.labels());
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& dataset) {
  StreamConfig sc = config.stream;
  for (LabelId y : dataset.table.labels())
    if (std::find(config.heldout_labels.begin(), config.heldout_labels.end(), y.value) == config.heldout_labels.end())
      sc.train_labels.insert(y);
  const auto suites = build_suites(dataset, config);
  const auto stream = build_stream(dataset, config.protocol, sc, config.seed);

  std::optional<DecoderParams> decoder;
  std::optional<ClassAccuracyTracker> tracker;
  auto capture = [&](int, const AnytimeEngine& engine) {
    decoder = engine.tuned_params();
    tracker = engine.tracker();
  };
  ExperimentResult result{run_stream(dataset, stream, suites, config.engine, capture), std::nullopt, *decoder, *tracker};

  if (config.task_suites && config.protocol == Protocol::TaskIncremental) {
    const Eigen::Index k = dataset.num_tasks();
    Eigen::MatrixXd acc(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
      for (Eigen::Index j = 0; j < k; ++j)
        acc(i, j) = result.metrics.accuracy(static_cast<int>(i) + 1, "task:" + std::to_string(j));
    result.mtil = mtil_metrics(acc);
  }
  return result;
}

void write_experiment_outputs(const ExperimentConfig& config, const ExperimentResult& result,
                              const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string hash = config.hash();
  const std::string meta = "config_hash=" + hash + ";seed=" + std::to_string(config.seed);
  std::vector<fs::path> written;
  auto open = [&](const std::string& name) {
    written.push_back(fs::path(out_dir) / name);
    std::ofstream f(written.back(), std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write " + written.back().string());
    return f;
  };
  try {
    {
      auto f = open("metrics.csv");
      f << "config_hash,seed,stage,suite,accuracy\n";
      char buf[64];
      for (const auto& row : result.metrics.rows) {
        std::snprintf(buf, sizeof buf, "%.10f", row.accuracy);
        f << hash << ',' << config.seed << ',' << row.stage << ',' << row.suite << ',' << buf << '\n';
      }
    }
    {
      json summary{{"config_hash", hash}, {"seed", config.seed}, {"config", config.canonical()}};
      const int last = result.metrics.num_stages() - 1;
      json final_acc = json::object();
      for (const auto& row : result.metrics.rows)
        if (row.stage == last) final_acc[row.suite] = row.accuracy;
      summary["final_stage"] = last;
      summary["final_accuracy"] = final_acc;
      if (result.mtil)
        summary["mtil"] = {{"transfer", result.mtil->transfer},
                           {"avg", result.mtil->avg},
                           {"last", result.mtil->last},
                           {"transfer_grand_mean", result.mtil->transfer_grand_mean},
                           {"avg_grand_mean", result.mtil->avg_grand_mean}};
      auto f = open("summary.json");
      f << summary.dump(2) << '\n';
    }
    {
      auto f = open("tracker.csv");
      f << "# " << meta << '\n';
      result.tracker.write_csv(f);
    }
    written.push_back(fs::path(out_dir) / "decoder.ckpt");
    save_decoder(result.final_decoder, written.back().string(), meta);
  } catch (...) {
    std::error_code ec;
    for (const auto& p : written) fs::remove(p, ec);
    throw;
  }
}

}  // namespace acl
