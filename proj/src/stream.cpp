#include "acl/stream.hpp"

#include <algorithm>

#include "acl/rng.hpp"

namespace acl {
namespace {

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

void validate_fractions(const std::vector<int>& f) {
  if (f.empty()) throw ConfigError("fractions_percent", "must not be empty");
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (f[i] <= 0 || (i > 0 && f[i] <= f[i - 1]))
      throw ConfigError("fractions_percent", "must be positive and strictly increasing");
  }
  if (f.back() != 100) throw ConfigError("fractions_percent", "must end at 100");
}

}  // namespace

const char* to_string(Protocol p) {
  switch (p) {
    case Protocol::DataIncremental: return "data_incremental";
    case Protocol::ClassIncremental: return "class_incremental";
    case Protocol::TaskIncremental: return "task_incremental";
    case Protocol::UnionDataIncremental: return "union_data_incremental";
  }
  return "?";
}

Protocol parse_protocol(const std::string& s) {
  if (s == "data_incremental") return Protocol::DataIncremental;
  if (s == "class_incremental") return Protocol::ClassIncremental;
  if (s == "task_incremental") return Protocol::TaskIncremental;
  if (s == "union_data_incremental") return Protocol::UnionDataIncremental;
  throw ConfigError("protocol", "unknown protocol '" + s + "'");
}

std::vector<StreamStage> build_stream(const Dataset& dataset, Protocol protocol, const StreamConfig& config,
                                      std::uint64_t seed) {
  if (dataset.table.size() == 0) throw ConfigError("dataset", "label table is empty");
  std::vector<std::size_t> pool;
  for (std::size_t i : dataset.indices(Split::Train))
    if (config.train_labels.empty() || config.train_labels.count(dataset.samples[i].label) != 0) pool.push_back(i);

  Rng rng(Rng::derive(seed, rng_stream::kShuffle));
  std::vector<StreamStage> stages;
  auto push_stage = [&stages](std::vector<std::size_t> ids) {
    stages.push_back({static_cast<int>(stages.size()) + 1, std::move(ids)});
  };

  switch (protocol) {
    case Protocol::DataIncremental:
    case Protocol::UnionDataIncremental: {
      // Union of tasks is the same pool; ordering is one seeded shuffle.
      validate_fractions(config.fractions_percent);
      shuffle(pool, rng);
      std::size_t begin = 0;
      for (int f : config.fractions_percent) {
        const std::size_t end = pool.size() * static_cast<std::size_t>(f) / 100;
        push_stage({pool.begin() + static_cast<std::ptrdiff_t>(begin), pool.begin() + static_cast<std::ptrdiff_t>(end)});
        begin = end;
      }
      break;
    }
    case Protocol::ClassIncremental: {
      if (config.class_groups < 1) throw ConfigError("class_groups", "must be >= 1");
      LabelSet labels;
      for (std::size_t i : pool) labels.insert(dataset.samples[i].label);
      const std::vector<LabelId> sorted(labels.begin(), labels.end());
      const std::size_t groups = std::min<std::size_t>(static_cast<std::size_t>(config.class_groups), sorted.size());
      const std::size_t base = groups ? sorted.size() / groups : 0;
      const std::size_t extra = groups ? sorted.size() % groups : 0;
      std::size_t start = 0;
      for (std::size_t g = 0; g < groups; ++g) {
        const std::size_t len = base + (g < extra ? 1 : 0);
        const LabelSet group(sorted.begin() + static_cast<std::ptrdiff_t>(start),
                             sorted.begin() + static_cast<std::ptrdiff_t>(start + len));
        start += len;
        std::vector<std::size_t> ids;
        for (std::size_t i : pool)
          if (group.count(dataset.samples[i].label) != 0) ids.push_back(i);
        shuffle(ids, rng);
        push_stage(std::move(ids));
      }
      break;
    }
    case Protocol::TaskIncremental: {
      if (dataset.task_of.empty()) throw ConfigError("protocol", "task_incremental requires a task partition");
      for (std::int32_t task = 0; task < dataset.num_tasks(); ++task) {
        const LabelSet labels = dataset.labels_of_task(task);
        std::vector<std::size_t> ids;
        for (std::size_t i : pool)
          if (labels.count(dataset.samples[i].label) != 0) ids.push_back(i);
        shuffle(ids, rng);
        push_stage(std::move(ids));
      }
      break;
    }
  }
  return stages;
}

double MetricsRecord::accuracy(int stage, const std::string& suite) const {
  for (const auto& r : rows)
    if (r.stage == stage && r.suite == suite) return r.accuracy;
  throw LookupError("no metric for stage " + std::to_string(stage) + " suite " + suite);
}

int MetricsRecord::num_stages() const {
  int n = 0;
  for (const auto& r : rows) n = std::max(n, r.stage + 1);
  return n;
}

EvalResult evaluate_suite(const AnytimeEngine& engine, const Dataset& dataset, const EvalSuite& suite) {
  EvalResult out;
  if (suite.samples.empty()) return out;
  std::size_t correct = 0;
  out.predictions.reserve(suite.samples.size());
  for (std::size_t i : suite.samples) {
    const auto& s = dataset.samples.at(i);
    const LabelId pred = argmax_label(engine.predict(materialize(s.payload), suite.candidates));
    out.predictions.push_back(pred);
    if (pred == s.label) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(suite.samples.size());
  return out;
}

MetricsRecord run_stream(const Dataset& dataset, const std::vector<StreamStage>& stream,
                         const std::vector<EvalSuite>& suites, const EngineConfig& config,
                         const StageCallback& on_stage_end) {
  AnytimeEngine engine(dataset.table, dataset.dim(), config);

  std::optional<DatasetPcaCodec> codec;
  if (config.compression.mode == CompressionMode::DatasetPca) {
    // Features are precomputed offline for every stream sample before training.
    std::vector<std::int64_t> ids;
    std::vector<TokenMatrix> tokens;
    for (const auto& st : stream)
      for (std::size_t i : st.samples) {
        ids.push_back(static_cast<std::int64_t>(i));
        tokens.push_back(materialize(dataset.samples[i].payload));
      }
    if (!ids.empty())
      codec = DatasetPcaCodec::fit(ids, tokens, config.compression.chunk_size, config.compression.dataset_components);
  }

  MetricsRecord record;
  auto evaluate = [&](int stage) {
    for (const auto& suite : suites) {
      auto r = evaluate_suite(engine, dataset, suite);
      record.rows.push_back({stage, suite.name, r.accuracy, std::move(r.predictions)});
    }
    if (on_stage_end) on_stage_end(stage, engine);
  };

  evaluate(0);
  for (const auto& st : stream) {
    for (std::size_t i : st.samples) {
      const auto& s = dataset.samples.at(i);
      const TokenMatrix tokens = materialize(s.payload);
      std::optional<Payload> stored;
      if (codec) {
        const auto id = static_cast<std::int64_t>(i);
        stored = TokenMatrix(codec->decode(id, codec->encode(id, tokens)));
      }
      engine.learn(tokens, s.label, std::move(stored));
    }
    engine.end_stage();
    evaluate(st.index);
  }
  return record;
}

MtilMetrics mtil_metrics(const Eigen::MatrixXd& acc) {
  if (acc.rows() < 1 || acc.rows() != acc.cols())
    throw ArgumentError("mtil_metrics: expected a square stages x tasks matrix");
  const Eigen::Index n = acc.rows();
  MtilMetrics m;
  m.last = acc.row(n - 1).mean();
  m.avg = acc.colwise().mean().mean();
  m.avg_grand_mean = acc.mean();
  if (n == 1) {
    // No task is ever untrained at evaluation time.
    m.transfer = m.transfer_grand_mean = 0.0;
    return m;
  }
  double col_sum = 0.0, all_sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index j = 1; j < n; ++j) {
    col_sum += acc.col(j).head(j).mean();
    all_sum += acc.col(j).head(j).sum();
    count += j;
  }
  m.transfer = col_sum / static_cast<double>(n - 1);
  m.transfer_grand_mean = all_sum / static_cast<double>(count);
  return m;
}

}  // namespace acl
