#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "acl/embedding.hpp"
#include "acl/rng.hpp"

namespace acl {

enum class DecoderVariant : std::uint32_t { Linear = 0, TransformerBlock = 1 };

inline constexpr double kLayerNormEps = 1e-5;

struct LinearParams {
  Eigen::MatrixXd weight;  // D_out x D_in, output = weight * cls + bias
  Eigen::VectorXd bias;    // D_out
};

// Pre-norm single-head block in row-vector convention (y = x * W).
struct BlockParams {
  Eigen::MatrixXd wq, wk, wv, wo;  // D x D
  Eigen::VectorXd ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Eigen::MatrixXd mlp_w1;  // D x 4D
  Eigen::VectorXd mlp_b1;  // 4D
  Eigen::MatrixXd mlp_w2;  // 4D x D
  Eigen::VectorXd mlp_b2;  // D
};

// Flat view over one parameter tensor, column-major.
struct TensorView {
  std::string_view name;
  double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  bool weight_decay;
  Eigen::Index size() const { return rows * cols; }
};

struct ConstTensorView {
  std::string_view name;
  const double* data;
  Eigen::Index rows;
  Eigen::Index cols;
  bool weight_decay;
  Eigen::Index size() const { return rows * cols; }
};

// Parameters of the trainable decoder plus the input-independent "other" logit.
// Arithmetic is double precision; checkpoints store 32-bit floats.
struct DecoderParams {
  DecoderVariant variant = DecoderVariant::Linear;
  Eigen::Index d_in = 0;
  Eigen::Index d_out = 0;
  LinearParams linear;
  BlockParams block;
  double other_logit = 0.0;

  std::vector<TensorView> tensors();
  std::vector<ConstTensorView> tensors() const;
  Eigen::Index num_values() const;

  // Same shapes, all zeros.
  DecoderParams zeros_like() const;

  Eigen::VectorXd flatten() const;
  void assign_flat(const Eigen::VectorXd& flat);
};

// Linear: identity (or seeded Gaussian / sqrt(D_in) when D_in != D_out), zero bias.
// TransformerBlock: seeded small Q/K/V/MLP-in weights, zero output projections and
// unit norms, so the fresh block passes CLS through unchanged.
DecoderParams make_decoder(DecoderVariant variant, Eigen::Index d_in, Eigen::Index d_out, std::uint64_t seed,
                           double init_scale = 0.02);

// Output embedding (post-block CLS row) for one token matrix.
Eigen::VectorXd decode(const Eigen::MatrixXd& tokens, const DecoderParams& params);
Embedding decode(const TokenMatrix& tokens, const DecoderParams& params);

// Full T x D block output. Only row 0 feeds the classifier; kept for reference checks.
Eigen::MatrixXd block_forward_all(const Eigen::MatrixXd& tokens, const BlockParams& params);

// Logits over candidates (in set order) followed by OTHER as the last entry.
struct AugmentedLogits {
  std::vector<LabelId> labels;
  Eigen::VectorXd values;  // labels.size() + 1
  double other() const { return values[values.size() - 1]; }
  Eigen::Index other_index() const { return values.size() - 1; }
  Eigen::Index index_of(LabelId y) const;
};

AugmentedLogits augmented_logits(const Eigen::VectorXd& e, const LabelEmbeddingTable& table,
                                 const LabelSet& candidates, double other_logit);

struct TrainingExample {
  Eigen::MatrixXd tokens;
  LabelId label;
};

struct TrainingBatch {
  std::vector<TrainingExample> samples;
  LabelSet candidates;
};

// mean over batch of CE(y | Y u OTHER) + beta * CE(OTHER | (Y u OTHER) \ y).
double combined_loss(const TrainingBatch& batch, const DecoderParams& params, const LabelEmbeddingTable& table,
                     double beta);

struct LossGradient {
  double loss = 0.0;
  DecoderParams grad;
};

// Analytic gradient of combined_loss with respect to every parameter.
LossGradient loss_gradients(const TrainingBatch& batch, const DecoderParams& params,
                            const LabelEmbeddingTable& table, double beta);

// Versioned little-endian checkpoint; layout in docs/FORMATS.md.
// `metadata` is an opaque UTF-8 string stored in the header (config hash, seed).
std::vector<std::uint8_t> serialize_decoder(const DecoderParams& params, std::string_view metadata = {});
DecoderParams deserialize_decoder(std::span<const std::uint8_t> bytes, std::string* metadata = nullptr);
void save_decoder(const DecoderParams& params, const std::string& path, std::string_view metadata = {});
DecoderParams load_decoder(const std::string& path, std::string* metadata = nullptr);

}  // namespace acl
