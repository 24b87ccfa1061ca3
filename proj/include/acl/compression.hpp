#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <map>
#include <span>
#include <variant>
#include <vector>

#include "acl/binary_io.hpp"
#include "acl/embedding.hpp"

namespace acl {

enum class EnvelopeMode : std::uint8_t { PerRow = 1, PerMatrix = 2 };
enum class RoundingMode : std::uint8_t { Nearest = 0, Truncate = 1 };

struct Envelope {
  float min = 0.0f;
  float max = 0.0f;
  friend bool operator==(const Envelope&, const Envelope&) = default;
};

// Min-max affine integer code for a float matrix.
struct QuantizedBlock {
  Eigen::Index rows = 0;
  Eigen::Index cols = 0;
  int bits = 8;  // 8 or 16
  EnvelopeMode mode = EnvelopeMode::PerRow;
  std::vector<std::uint16_t> codes;  // row-major
  std::vector<Envelope> envelopes;   // one per row, or a single one

  std::size_t payload_bytes() const {
    return codes.size() * static_cast<std::size_t>(bits / 8) + envelopes.size() * 2 * sizeof(float);
  }
  const Envelope& envelope_for_row(Eigen::Index r) const {
    return mode == EnvelopeMode::PerRow ? envelopes[static_cast<std::size_t>(r)] : envelopes.front();
  }
  friend bool operator==(const QuantizedBlock&, const QuantizedBlock&) = default;
};

QuantizedBlock quantize(const Eigen::MatrixXf& block, int bits, EnvelopeMode mode = EnvelopeMode::PerRow,
                        RoundingMode rounding = RoundingMode::Nearest);
Eigen::MatrixXf dequantize(const QuantizedBlock& q);

// Either raw 32-bit floats or a quantized code.
struct FeatureBlock {
  std::variant<Eigen::MatrixXf, QuantizedBlock> data;

  bool quantized() const { return std::holds_alternative<QuantizedBlock>(data); }
  Eigen::Index rows() const;
  Eigen::Index cols() const;
  Eigen::MatrixXf values() const;
  std::size_t payload_bytes() const;
  friend bool operator==(const FeatureBlock& a, const FeatureBlock& b);
};

// Per-instance PCA artifact: tokens ~= coefficients * components + mean.
struct CompressedFeature {
  Eigen::Index num_tokens = 0;
  Eigen::Index dim = 0;
  Eigen::Index n = 0;
  FeatureBlock mean;          // 1 x D
  FeatureBlock coefficients;  // T x n  (U_n Sigma_n)
  FeatureBlock components;    // n x D  (V_n^T)

  friend bool operator==(const CompressedFeature&, const CompressedFeature&) = default;
};

struct QuantizeOptions {
  bool components = true;    // 8-bit, per-row envelopes
  bool mean = true;          // 8-bit, single row
  bool coefficients = true;  // 16-bit, one envelope for the matrix
  RoundingMode rounding = RoundingMode::Nearest;
};

// Scales patch rows by softmax(LN(C) . LN(P_i) / sqrt(D)). With `rescale` the
// weights are multiplied by T-1 so the mean patch scale is 1. CLS row untouched.
Eigen::MatrixXf cls_weighting(const Eigen::MatrixXf& tokens, const Eigen::VectorXd& norm_gain,
                              const Eigen::VectorXd& norm_bias, bool rescale = true);
// The softmax weights alone (sum to 1, length T-1).
Eigen::VectorXd cls_attention_weights(const Eigen::MatrixXf& tokens, const Eigen::VectorXd& norm_gain,
                                      const Eigen::VectorXd& norm_bias);

// Center over tokens, thin SVD, keep top n. Each component's largest-magnitude
// entry is made non-negative.
CompressedFeature per_instance_pca(const Eigen::MatrixXf& tokens, Eigen::Index n);
CompressedFeature quantize_feature(const CompressedFeature& cf, const QuantizeOptions& opts = {});

Eigen::MatrixXf reconstruct(const CompressedFeature& cf);

// Payload bytes per example: block data plus quantization envelopes.
std::size_t storage_bytes(const CompressedFeature& cf);
std::size_t storage_bytes(const TokenMatrix& tokens);
// Full on-disk record size: fixed header + storage_bytes.
std::size_t serialized_size(const CompressedFeature& cf);
inline constexpr std::size_t kFeatureRecordHeaderBytes = 32;

void write_compressed_feature(ByteWriter& w, const CompressedFeature& cf);
CompressedFeature read_compressed_feature(ByteReader& r);

// Chunked PCA over all tokens of all samples in a chunk.
class DatasetPcaCodec {
 public:
  struct Chunk {
    Eigen::RowVectorXf mean;     // D
    Eigen::MatrixXf components;  // n_chunk x D
    std::vector<std::int64_t> ids;
  };

  static DatasetPcaCodec fit(std::span<const std::int64_t> ids, std::span<const TokenMatrix> samples,
                             std::size_t chunk_size, Eigen::Index n_components);

  std::size_t chunk_of(std::int64_t id) const;
  Eigen::MatrixXf encode(std::int64_t id, const TokenMatrix& tokens) const;
  Eigen::MatrixXf decode(std::int64_t id, const Eigen::MatrixXf& coefficients) const;

  const std::vector<Chunk>& chunks() const { return chunks_; }
  Eigen::Index n_components() const { return n_components_; }
  std::size_t chunk_size() const { return chunk_size_; }
  // Coefficients plus this sample's share of its chunk's mean and components.
  double storage_bytes_per_sample(std::int64_t id, Eigen::Index num_tokens) const;

 private:
  std::vector<Chunk> chunks_;
  std::map<std::int64_t, std::size_t> membership_;
  Eigen::Index n_components_ = 0;
  std::size_t chunk_size_ = 0;
};

}  // namespace acl
