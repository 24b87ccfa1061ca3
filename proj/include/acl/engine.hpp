#pragma once

#include <map>
#include <optional>

#include "acl/compression.hpp"
#include "acl/dataset.hpp"
#include "acl/decoder.hpp"
#include "acl/ocw.hpp"
#include "acl/online.hpp"
#include "acl/optimizer.hpp"
#include "acl/replay_store.hpp"

namespace acl {

enum class CompressionMode { None, Pca, PcaCls, PcaClsQuant, DatasetPca };

const char* to_string(CompressionMode m);
CompressionMode parse_compression_mode(const std::string& s);

struct CompressionConfig {
  CompressionMode mode = CompressionMode::None;
  Eigen::Index components = 5;   // per-instance n
  Eigen::Index dataset_components = 200;  // n_d
  std::size_t chunk_size = 5000;
  bool rescale_patch_weights = true;
  RoundingMode rounding = RoundingMode::Nearest;
};

struct EngineConfig {
  DecoderVariant decoder = DecoderVariant::Linear;
  double init_scale = 0.02;
  SamplerConfig sampler;
  AdamWConfig optimizer;
  double beta = 0.1;
  double eta = 0.99;
  WeightingStrategy weighting = WeightingStrategy::OCW;
  bool p_other_weighting = false;
  CompressionConfig compression;
  std::uint64_t seed = 0;
};

// Frozen scorer + online-tuned decoder + replay store + OCW tracker.
class AnytimeEngine {
 public:
  AnytimeEngine(LabelEmbeddingTable table, Eigen::Index token_dim, EngineConfig config);

  // Receive one training example: store it, update the accuracy estimates
  // from both models' predictions over the seen labels, then take one step.
  // `stored` overrides the payload kept in the replay store (used when the
  // payload comes from an offline codec such as dataset-wide PCA).
  OnlineUpdateResult learn(const TokenMatrix& tokens, LabelId label, std::optional<Payload> stored = std::nullopt);

  Distribution predict_frozen(const TokenMatrix& tokens, const LabelSet& candidates) const;
  Distribution predict_tuned(const TokenMatrix& tokens, const LabelSet& candidates) const;
  // Combination chosen by the configured weighting strategy.
  Distribution predict(const TokenMatrix& tokens, const LabelSet& candidates) const;

  // Refreshes state that is only recomputed between stages (NN-LOO confidences).
  void end_stage();

  // Storage payload for an incoming example under the per-instance compression modes.
  Payload compress(const TokenMatrix& tokens) const;

  const EngineConfig& config() const { return config_; }
  const LabelEmbeddingTable& table() const { return table_; }
  const DecoderParams& tuned_params() const { return tuned_; }
  const DecoderParams& frozen_params() const { return frozen_; }
  const ReplayStore& store() const { return store_; }
  const ClassAccuracyTracker& tracker() const { return tracker_; }
  const OptimizerState& optimizer_state() const { return optimizer_; }

 private:
  LabelEmbeddingTable table_;
  EngineConfig config_;
  DecoderParams frozen_;
  DecoderParams tuned_;
  OptimizerState optimizer_;
  ReplayStore store_;
  ClassAccuracyTracker tracker_;
  Rng rng_;
  ClassAccuracyTracker nn_confidence_;
  LabelSet nn_labels_;
};

}  // namespace acl
