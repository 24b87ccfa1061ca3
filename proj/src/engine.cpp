#include "acl/engine.hpp"

#include <algorithm>

namespace acl {

const char* to_string(CompressionMode m) {
  switch (m) {
    case CompressionMode::None: return "none";
    case CompressionMode::Pca: return "pca";
    case CompressionMode::PcaCls: return "pca_cls";
    case CompressionMode::PcaClsQuant: return "pca_cls_quant";
    case CompressionMode::DatasetPca: return "dataset_pca";
  }
  return "?";
}

CompressionMode parse_compression_mode(const std::string& s) {
  if (s == "none") return CompressionMode::None;
  if (s == "pca") return CompressionMode::Pca;
  if (s == "pca_cls") return CompressionMode::PcaCls;
  if (s == "pca_cls_quant") return CompressionMode::PcaClsQuant;
  if (s == "dataset_pca") return CompressionMode::DatasetPca;
  throw ConfigError("compression.mode", "unknown mode '" + s + "'");
}

AnytimeEngine::AnytimeEngine(LabelEmbeddingTable table, Eigen::Index token_dim, EngineConfig config)
    : table_(std::move(table)),
      config_(config),
      frozen_(make_decoder(config.decoder, token_dim, table_.dim(), config.seed, config.init_scale)),
      tuned_(frozen_),
      optimizer_(OptimizerState::for_params(tuned_, config.optimizer)),
      tracker_(config.eta),
      rng_(Rng::derive(config.seed, rng_stream::kSampler)),
      nn_confidence_(config.eta) {
  config_.sampler.validate();
  if (!(config_.beta >= 0.0)) throw ConfigError("beta", "must be >= 0");
}

Payload AnytimeEngine::compress(const TokenMatrix& tokens) const {
  const auto& c = config_.compression;
  switch (c.mode) {
    case CompressionMode::None:
      return tokens;
    case CompressionMode::Pca:
      return per_instance_pca(tokens.matrix(), c.components);
    case CompressionMode::PcaCls:
    case CompressionMode::PcaClsQuant: {
      // Norm parameters of the frozen block; identity norm for the linear decoder.
      const Eigen::Index d = tokens.dim();
      Eigen::VectorXd gain = Eigen::VectorXd::Ones(d);
      Eigen::VectorXd bias = Eigen::VectorXd::Zero(d);
      if (frozen_.variant == DecoderVariant::TransformerBlock) {
        gain = frozen_.block.ln1_gain;
        bias = frozen_.block.ln1_bias;
      }
      auto cf = per_instance_pca(cls_weighting(tokens.matrix(), gain, bias, c.rescale_patch_weights), c.components);
      if (c.mode == CompressionMode::PcaClsQuant) {
        QuantizeOptions q;
        q.rounding = c.rounding;
        cf = quantize_feature(cf, q);
      }
      return cf;
    }
    case CompressionMode::DatasetPca:
      throw ArgumentError("dataset-wide PCA payloads must be supplied by the caller");
  }
  return tokens;
}

OnlineUpdateResult AnytimeEngine::learn(const TokenMatrix& tokens, LabelId label, std::optional<Payload> stored) {
  if (!table_.contains(label)) throw LookupError("training label missing from label table: " + std::to_string(label.value));
  const SampleId id = store_.insert(label, stored ? std::move(*stored) : compress(tokens));
  const LabelSet& seen = store_.seen_labels();
  const bool tuned_correct = argmax_label(predict_tuned(tokens, seen)) == label;
  const bool frozen_correct = argmax_label(predict_frozen(tokens, seen)) == label;
  tracker_.update(label, tuned_correct, frozen_correct);
  OnlineUpdateConfig oc{config_.sampler, config_.beta};
  return online_update(id, store_, tuned_, optimizer_, oc, table_, rng_);
}

Distribution AnytimeEngine::predict_frozen(const TokenMatrix& tokens, const LabelSet& candidates) const {
  return zero_shot_probabilities(decode(tokens.as_double(), frozen_), table_, candidates);
}

Distribution AnytimeEngine::predict_tuned(const TokenMatrix& tokens, const LabelSet& candidates) const {
  return zero_shot_probabilities(decode(tokens.as_double(), tuned_), table_, candidates);
}

Distribution AnytimeEngine::predict(const TokenMatrix& tokens, const LabelSet& candidates) const {
  const LabelSet& seen = store_.seen_labels();
  switch (config_.weighting) {
    case WeightingStrategy::FrozenOnly:
      return predict_frozen(tokens, candidates);
    case WeightingStrategy::TunedOnly:
      return predict_tuned(tokens, candidates);
    default:
      break;
  }
  const Distribution frozen = predict_frozen(tokens, candidates);
  // Nothing trained yet: every alpha_t is zero under all strategies.
  if (seen.empty()) return frozen;
  const Eigen::VectorXd e = decode(tokens.as_double(), tuned_);
  const Distribution tuned = zero_shot_probabilities(e, table_, candidates);
  std::optional<double> po;
  if (config_.p_other_weighting) po = p_other(augmented_logits(e, table_, candidates, tuned_.other_logit));

  const bool all_seen =
      std::all_of(candidates.begin(), candidates.end(), [&](LabelId y) { return seen.count(y) != 0; });
  std::map<LabelId, double> a;
  switch (config_.weighting) {
    case WeightingStrategy::OCW:
      return combined_prediction(tuned, frozen, tracker_, seen, po);
    case WeightingStrategy::OCW01:
      for (LabelId y : candidates) a[y] = alpha(tracker_, y, seen, all_seen, po).tuned >= 0.5 ? 1.0 : 0.0;
      break;
    case WeightingStrategy::AIM: {
      const double g = aim_alpha(frozen, seen);
      for (LabelId y : candidates) a[y] = g;
      break;
    }
    case WeightingStrategy::NNLOO:
      for (LabelId y : candidates) a[y] = alpha(nn_confidence_, y, nn_labels_, all_seen, po).tuned;
      break;
    default:
      break;
  }
  return mix_predictions(tuned, frozen, a);
}

void AnytimeEngine::end_stage() {
  if (config_.weighting != WeightingStrategy::NNLOO) return;
  std::vector<std::pair<Eigen::VectorXd, LabelId>> tuned_ex, frozen_ex;
  for (const auto& s : store_.samples()) {
    const Eigen::MatrixXd x = materialize(s.payload).as_double();
    tuned_ex.emplace_back(decode(x, tuned_), s.label);
    frozen_ex.emplace_back(decode(x, frozen_), s.label);
  }
  const auto ct = nn_loo_confidence(tuned_ex);
  const auto co = nn_loo_confidence(frozen_ex);
  // Classes with fewer than two exemplars stay absent and therefore get alpha_t = 0.
  nn_confidence_ = ClassAccuracyTracker(config_.eta);
  nn_labels_.clear();
  for (const auto& [label, t] : ct) {
    nn_confidence_.set(label, ClassAccuracy{t, co.at(label), 1});
    nn_labels_.insert(label);
  }
}

}  // namespace acl
