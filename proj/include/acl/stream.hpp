#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "acl/dataset.hpp"
#include "acl/engine.hpp"

namespace acl {

enum class Protocol { DataIncremental, ClassIncremental, TaskIncremental, UnionDataIncremental };

const char* to_string(Protocol p);
Protocol parse_protocol(const std::string& s);

struct StreamConfig {
  std::vector<int> fractions_percent{2, 4, 8, 16, 32, 64, 100};  // cumulative
  int class_groups = 5;
  LabelSet train_labels;  // empty: all labels
};

// One increment of the stream: dataset sample indices in arrival order.
struct StreamStage {
  int index = 0;
  std::vector<std::size_t> samples;
};

std::vector<StreamStage> build_stream(const Dataset& dataset, Protocol protocol, const StreamConfig& config,
                                      std::uint64_t seed);

struct EvalSuite {
  std::string name;
  std::vector<std::size_t> samples;
  LabelSet candidates;
};

struct MetricRow {
  int stage = 0;  // 0 = before any training
  std::string suite;
  double accuracy = 0.0;
  std::vector<LabelId> predictions;  // per suite sample
};

struct MetricsRecord {
  std::vector<MetricRow> rows;
  double accuracy(int stage, const std::string& suite) const;
  int num_stages() const;  // including stage 0
};

using StageCallback = std::function<void(int stage, const AnytimeEngine& engine)>;

// Evaluate before training (stage 0) and after every stage. The tracker is
// not updated during evaluation.
MetricsRecord run_stream(const Dataset& dataset, const std::vector<StreamStage>& stream,
                         const std::vector<EvalSuite>& suites, const EngineConfig& config,
                         const StageCallback& on_stage_end = {});

struct EvalResult {
  double accuracy = 0.0;
  std::vector<LabelId> predictions;
};
EvalResult evaluate_suite(const AnytimeEngine& engine, const Dataset& dataset, const EvalSuite& suite);

struct MtilMetrics {
  double transfer = 0.0;  // mean over tasks of the not-yet-trained entries of that task's column
  double avg = 0.0;       // mean of per-task column means
  double last = 0.0;      // mean of final row
  double transfer_grand_mean = 0.0;  // mean of all strictly-upper entries
  double avg_grand_mean = 0.0;       // mean of all entries
};

// accuracy(i, j): after training stage i, on task j. Square, task order = stage order.
MtilMetrics mtil_metrics(const Eigen::MatrixXd& accuracy);

}  // namespace acl
