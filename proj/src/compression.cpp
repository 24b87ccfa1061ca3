#include "acl/compression.hpp"

#include <algorithm>
#include <cmath>

namespace acl {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::MatrixXf;
using Eigen::VectorXd;

Envelope envelope_of(const Eigen::Ref<const MatrixXf>& m) { return {m.minCoeff(), m.maxCoeff()}; }

std::uint16_t encode_value(float x, const Envelope& env, double levels, RoundingMode rounding) {
  const double range = static_cast<double>(env.max) - static_cast<double>(env.min);
  if (!(range > 0.0)) return 0;
  const double t = (static_cast<double>(x) - env.min) / range * levels;
  const double code = rounding == RoundingMode::Nearest ? std::floor(t + 0.5) : std::floor(t);
  return static_cast<std::uint16_t>(std::clamp(code, 0.0, levels));
}

float decode_value(std::uint16_t code, const Envelope& env, double levels) {
  const double range = static_cast<double>(env.max) - static_cast<double>(env.min);
  const double v = env.min + static_cast<double>(code) / levels * range;
  return std::clamp(static_cast<float>(v), env.min, env.max);
}

struct ThinPca {
  Eigen::RowVectorXd mean;
  MatrixXd coefficients;  // rows x n
  MatrixXd components;    // n x D
};

template <class Svd>
ThinPca thin_pca(const MatrixXd& x, Index n) {
  ThinPca out;
  out.mean = x.colwise().mean();
  const MatrixXd centered = x.rowwise() - out.mean;
  Svd svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Index r = std::min<Index>(n, svd.singularValues().size());
  out.coefficients = svd.matrixU().leftCols(r) * svd.singularValues().head(r).asDiagonal();
  out.components = svd.matrixV().leftCols(r).transpose();
  for (Index k = 0; k < r; ++k) {
    Index idx;
    out.components.row(k).cwiseAbs().maxCoeff(&idx);
    if (out.components(k, idx) < 0.0) {
      out.components.row(k) *= -1.0;
      out.coefficients.col(k) *= -1.0;
    }
  }
  // Pad when the input has fewer rows than requested components.
  if (r < n) {
    out.coefficients.conservativeResize(Eigen::NoChange, n);
    out.coefficients.rightCols(n - r).setZero();
    out.components.conservativeResize(n, Eigen::NoChange);
    out.components.bottomRows(n - r).setZero();
  }
  return out;
}

constexpr char kFeatureMagic[4] = {'A', 'C', 'L', 'F'};
constexpr std::uint32_t kFeatureVersion = 1;

void write_block_descriptor(ByteWriter& w, const FeatureBlock& b) {
  if (const auto* q = std::get_if<QuantizedBlock>(&b.data)) {
    w.put_u8(1);
    w.put_u8(static_cast<std::uint8_t>(q->bits));
    w.put_u8(static_cast<std::uint8_t>(q->mode));
  } else {
    w.put_u8(0);
    w.put_u8(32);
    w.put_u8(0);
  }
  w.put_u8(0);
}

void write_block_payload(ByteWriter& w, const FeatureBlock& b) {
  if (const auto* q = std::get_if<QuantizedBlock>(&b.data)) {
    for (const auto& e : q->envelopes) {
      w.put_f32(e.min);
      w.put_f32(e.max);
    }
    for (std::uint16_t c : q->codes) {
      if (q->bits == 8)
        w.put_u8(static_cast<std::uint8_t>(c));
      else
        w.put_u16(c);
    }
  } else {
    const auto& m = std::get<MatrixXf>(b.data);
    for (Index i = 0; i < m.rows(); ++i)
      for (Index j = 0; j < m.cols(); ++j) w.put_f32(m(i, j));
  }
}

struct BlockDescriptor {
  std::uint8_t encoding, bits, mode;
  std::size_t at;
};

BlockDescriptor read_block_descriptor(ByteReader& r) {
  BlockDescriptor d{};
  d.at = r.offset();
  d.encoding = r.get_u8();
  d.bits = r.get_u8();
  d.mode = r.get_u8();
  r.get_u8();
  const bool raw_ok = d.encoding == 0 && d.bits == 32 && d.mode == 0;
  const bool quant_ok = d.encoding == 1 && (d.bits == 8 || d.bits == 16) && (d.mode == 1 || d.mode == 2);
  if (!raw_ok && !quant_ok) throw FormatError("invalid block descriptor", d.at);
  return d;
}

FeatureBlock read_block_payload(ByteReader& r, const BlockDescriptor& d, Index rows, Index cols) {
  if (d.encoding == 0) {
    MatrixXf m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = r.get_f32();
    return {m};
  }
  QuantizedBlock q;
  q.rows = rows;
  q.cols = cols;
  q.bits = d.bits;
  q.mode = static_cast<EnvelopeMode>(d.mode);
  const Index n_env = q.mode == EnvelopeMode::PerRow ? rows : 1;
  for (Index i = 0; i < n_env; ++i) {
    const std::size_t at = r.offset();
    Envelope e{r.get_f32(), r.get_f32()};
    if (!(e.min <= e.max)) throw FormatError("quantization envelope min > max", at);
    q.envelopes.push_back(e);
  }
  q.codes.resize(static_cast<std::size_t>(rows * cols));
  const std::uint16_t max_code = q.bits == 8 ? 255 : 65535;
  for (auto& c : q.codes) {
    c = q.bits == 8 ? r.get_u8() : r.get_u16();
    if (c > max_code) throw FormatError("quantization code out of range", r.offset());
  }
  return {q};
}

}  // namespace

// ---- quantization ---------------------------------------------------------

QuantizedBlock quantize(const MatrixXf& block, int bits, EnvelopeMode mode, RoundingMode rounding) {
  if (bits != 8 && bits != 16) throw ArgumentError("quantize: bit width must be 8 or 16");
  if (block.size() == 0) throw ArgumentError("quantize: empty block");
  if (!all_finite(block)) throw ArgumentError("quantize: non-finite entry");
  QuantizedBlock q;
  q.rows = block.rows();
  q.cols = block.cols();
  q.bits = bits;
  q.mode = mode;
  const double levels = std::ldexp(1.0, bits) - 1.0;
  if (mode == EnvelopeMode::PerRow) {
    for (Index i = 0; i < block.rows(); ++i) q.envelopes.push_back(envelope_of(block.row(i)));
  } else {
    q.envelopes.push_back(envelope_of(block));
  }
  q.codes.reserve(static_cast<std::size_t>(block.size()));
  for (Index i = 0; i < block.rows(); ++i) {
    const Envelope& env = q.envelope_for_row(i);
    for (Index j = 0; j < block.cols(); ++j) q.codes.push_back(encode_value(block(i, j), env, levels, rounding));
  }
  return q;
}

MatrixXf dequantize(const QuantizedBlock& q) {
  if (q.codes.size() != static_cast<std::size_t>(q.rows * q.cols)) throw CorruptionError("dequantize: code count mismatch");
  const std::size_t want_env = q.mode == EnvelopeMode::PerRow ? static_cast<std::size_t>(q.rows) : 1;
  if (q.envelopes.size() != want_env) throw CorruptionError("dequantize: envelope count mismatch");
  const double levels = std::ldexp(1.0, q.bits) - 1.0;
  MatrixXf out(q.rows, q.cols);
  std::size_t k = 0;
  for (Index i = 0; i < q.rows; ++i) {
    const Envelope& env = q.envelope_for_row(i);
    for (Index j = 0; j < q.cols; ++j) out(i, j) = decode_value(q.codes[k++], env, levels);
  }
  return out;
}

// ---- feature blocks -------------------------------------------------------

Index FeatureBlock::rows() const {
  if (const auto* q = std::get_if<QuantizedBlock>(&data)) return q->rows;
  return std::get<MatrixXf>(data).rows();
}

Index FeatureBlock::cols() const {
  if (const auto* q = std::get_if<QuantizedBlock>(&data)) return q->cols;
  return std::get<MatrixXf>(data).cols();
}

MatrixXf FeatureBlock::values() const {
  if (const auto* q = std::get_if<QuantizedBlock>(&data)) return dequantize(*q);
  return std::get<MatrixXf>(data);
}

std::size_t FeatureBlock::payload_bytes() const {
  if (const auto* q = std::get_if<QuantizedBlock>(&data)) return q->payload_bytes();
  return static_cast<std::size_t>(std::get<MatrixXf>(data).size()) * sizeof(float);
}

bool operator==(const FeatureBlock& a, const FeatureBlock& b) {
  if (a.data.index() != b.data.index()) return false;
  if (a.quantized()) return std::get<QuantizedBlock>(a.data) == std::get<QuantizedBlock>(b.data);
  const auto& ma = std::get<MatrixXf>(a.data);
  const auto& mb = std::get<MatrixXf>(b.data);
  return ma.rows() == mb.rows() && ma.cols() == mb.cols() && ma == mb;
}

// ---- CLS weighting --------------------------------------------------------

VectorXd cls_attention_weights(const MatrixXf& tokens, const VectorXd& gain, const VectorXd& bias) {
  if (tokens.rows() < 2) throw ArgumentError("cls_weighting: need at least one patch token (T >= 2)");
  if (gain.size() != tokens.cols() || bias.size() != tokens.cols())
    throw ArgumentError("cls_weighting: norm parameters do not match token dimension");
  auto norm = [&](Index t) {
    const VectorXd x = tokens.row(t).transpose().cast<double>();
    const VectorXd c = x.array() - x.mean();
    const double rstd = 1.0 / std::sqrt(c.squaredNorm() / static_cast<double>(x.size()) + 1e-5);
    return VectorXd(gain.cwiseProduct(c * rstd) + bias);
  };
  const VectorXd cls = norm(0);
  const double scale = 1.0 / std::sqrt(static_cast<double>(tokens.cols()));
  VectorXd sims(tokens.rows() - 1);
  for (Index t = 1; t < tokens.rows(); ++t) sims[t - 1] = cls.dot(norm(t)) * scale;
  return stable_softmax(sims);
}

MatrixXf cls_weighting(const MatrixXf& tokens, const VectorXd& gain, const VectorXd& bias, bool rescale) {
  const VectorXd s = cls_attention_weights(tokens, gain, bias);
  const double factor = rescale ? static_cast<double>(tokens.rows() - 1) : 1.0;
  MatrixXf out = tokens;
  for (Index t = 1; t < tokens.rows(); ++t) out.row(t) = (tokens.row(t).cast<double>() * (s[t - 1] * factor)).cast<float>();
  return out;
}

// ---- per-instance PCA -----------------------------------------------------

CompressedFeature per_instance_pca(const MatrixXf& tokens, Index n) {
  const Index max_n = std::min(tokens.rows(), tokens.cols());
  if (n < 1 || n > max_n)
    throw ArgumentError("per_instance_pca: n must be in [1, " + std::to_string(max_n) + "], got " + std::to_string(n));
  if (!all_finite(tokens)) throw ArgumentError("per_instance_pca: non-finite input");
  const ThinPca pca = thin_pca<Eigen::JacobiSVD<MatrixXd>>(tokens.cast<double>(), n);
  CompressedFeature cf;
  cf.num_tokens = tokens.rows();
  cf.dim = tokens.cols();
  cf.n = n;
  cf.mean.data = MatrixXf(pca.mean.cast<float>());
  cf.coefficients.data = MatrixXf(pca.coefficients.cast<float>());
  cf.components.data = MatrixXf(pca.components.cast<float>());
  return cf;
}

CompressedFeature quantize_feature(const CompressedFeature& cf, const QuantizeOptions& opts) {
  CompressedFeature out = cf;
  if (opts.components && !cf.components.quantized())
    out.components.data = quantize(cf.components.values(), 8, EnvelopeMode::PerRow, opts.rounding);
  if (opts.mean && !cf.mean.quantized())
    out.mean.data = quantize(cf.mean.values(), 8, EnvelopeMode::PerRow, opts.rounding);
  if (opts.coefficients && !cf.coefficients.quantized())
    out.coefficients.data = quantize(cf.coefficients.values(), 16, EnvelopeMode::PerMatrix, opts.rounding);
  return out;
}

MatrixXf reconstruct(const CompressedFeature& cf) {
  if (cf.mean.rows() != 1 || cf.mean.cols() != cf.dim || cf.coefficients.rows() != cf.num_tokens ||
      cf.coefficients.cols() != cf.n || cf.components.rows() != cf.n || cf.components.cols() != cf.dim)
    throw CorruptionError("reconstruct: inconsistent block shapes");
  const MatrixXd coeff = cf.coefficients.values().cast<double>();
  const MatrixXd comp = cf.components.values().cast<double>();
  const Eigen::RowVectorXd mean = cf.mean.values().cast<double>();
  return ((coeff * comp).rowwise() + mean).cast<float>();
}

std::size_t storage_bytes(const CompressedFeature& cf) {
  if (cf.n < 1) throw ArgumentError("storage_bytes: compressed feature has no components");
  return cf.mean.payload_bytes() + cf.coefficients.payload_bytes() + cf.components.payload_bytes();
}

std::size_t storage_bytes(const TokenMatrix& tokens) {
  return static_cast<std::size_t>(tokens.matrix().size()) * sizeof(float);
}

std::size_t serialized_size(const CompressedFeature& cf) { return kFeatureRecordHeaderBytes + storage_bytes(cf); }

void write_compressed_feature(ByteWriter& w, const CompressedFeature& cf) {
  const std::size_t start = w.size();
  w.put_bytes(std::string_view(kFeatureMagic, 4));
  w.put_u32(kFeatureVersion);
  w.put_u32(static_cast<std::uint32_t>(cf.num_tokens));
  w.put_u32(static_cast<std::uint32_t>(cf.dim));
  w.put_u32(static_cast<std::uint32_t>(cf.n));
  write_block_descriptor(w, cf.mean);
  write_block_descriptor(w, cf.coefficients);
  write_block_descriptor(w, cf.components);
  write_block_payload(w, cf.mean);
  write_block_payload(w, cf.coefficients);
  write_block_payload(w, cf.components);
  if (w.size() - start != serialized_size(cf)) throw CorruptionError("compressed feature size accounting mismatch");
}

CompressedFeature read_compressed_feature(ByteReader& r) {
  r.expect_magic(std::string_view(kFeatureMagic, 4), "compressed feature");
  const std::size_t version_at = r.offset();
  if (r.get_u32() != kFeatureVersion) throw FormatError("unsupported compressed feature version", version_at);
  const std::size_t shape_at = r.offset();
  CompressedFeature cf;
  cf.num_tokens = r.get_u32();
  cf.dim = r.get_u32();
  cf.n = r.get_u32();
  if (cf.num_tokens < 1 || cf.dim < 1 || cf.n < 1 || cf.n > std::min(cf.num_tokens, cf.dim))
    throw FormatError("invalid compressed feature shape", shape_at);
  const auto dm = read_block_descriptor(r);
  const auto dc = read_block_descriptor(r);
  const auto dv = read_block_descriptor(r);
  cf.mean = read_block_payload(r, dm, 1, cf.dim);
  cf.coefficients = read_block_payload(r, dc, cf.num_tokens, cf.n);
  cf.components = read_block_payload(r, dv, cf.n, cf.dim);
  return cf;
}

// ---- dataset-wide PCA -----------------------------------------------------

DatasetPcaCodec DatasetPcaCodec::fit(std::span<const std::int64_t> ids, std::span<const TokenMatrix> samples,
                                     std::size_t chunk_size, Index n_components) {
  if (ids.size() != samples.size()) throw ArgumentError("dataset_pca_fit: ids and samples differ in length");
  if (samples.empty()) throw ArgumentError("dataset_pca_fit: no samples");
  if (n_components < 1) throw ArgumentError("dataset_pca_fit: n_d must be positive");
  if (chunk_size < static_cast<std::size_t>(n_components)) throw ArgumentError("dataset_pca_fit: chunk_size < n_d");
  const Index dim = samples.front().dim();
  if (n_components > dim) throw ArgumentError("dataset_pca_fit: n_d exceeds feature dimension");

  DatasetPcaCodec codec;
  codec.n_components_ = n_components;
  codec.chunk_size_ = chunk_size;
  for (std::size_t begin = 0; begin < samples.size(); begin += chunk_size) {
    const std::size_t end = std::min(samples.size(), begin + chunk_size);
    Index rows = 0;
    for (std::size_t i = begin; i < end; ++i) {
      if (samples[i].dim() != dim) throw ArgumentError("dataset_pca_fit: inconsistent token dimension");
      rows += samples[i].num_tokens();
    }
    MatrixXd stacked(rows, dim);
    Index r = 0;
    Chunk chunk;
    for (std::size_t i = begin; i < end; ++i) {
      stacked.middleRows(r, samples[i].num_tokens()) = samples[i].as_double();
      r += samples[i].num_tokens();
      chunk.ids.push_back(ids[i]);
      if (!codec.membership_.emplace(ids[i], codec.chunks_.size()).second)
        throw ArgumentError("dataset_pca_fit: duplicate sample id " + std::to_string(ids[i]));
    }
    const ThinPca pca = thin_pca<Eigen::BDCSVD<MatrixXd>>(stacked, n_components);
    chunk.mean = pca.mean.cast<float>();
    chunk.components = pca.components.cast<float>();
    codec.chunks_.push_back(std::move(chunk));
  }
  return codec;
}

std::size_t DatasetPcaCodec::chunk_of(std::int64_t id) const {
  auto it = membership_.find(id);
  if (it == membership_.end()) throw LookupError("sample " + std::to_string(id) + " is not in any PCA chunk");
  return it->second;
}

MatrixXf DatasetPcaCodec::encode(std::int64_t id, const TokenMatrix& tokens) const {
  const Chunk& c = chunks_[chunk_of(id)];
  if (tokens.dim() != c.components.cols()) throw ArgumentError("dataset_pca_encode: dimension mismatch");
  const MatrixXd centered = tokens.as_double().rowwise() - c.mean.cast<double>();
  return (centered * c.components.cast<double>().transpose()).cast<float>();
}

MatrixXf DatasetPcaCodec::decode(std::int64_t id, const MatrixXf& coefficients) const {
  const Chunk& c = chunks_[chunk_of(id)];
  if (coefficients.cols() != c.components.rows()) throw ArgumentError("dataset_pca_decode: coefficient width mismatch");
  return ((coefficients.cast<double>() * c.components.cast<double>()).rowwise() + c.mean.cast<double>()).cast<float>();
}

double DatasetPcaCodec::storage_bytes_per_sample(std::int64_t id, Index num_tokens) const {
  const Chunk& c = chunks_[chunk_of(id)];
  const double shared = static_cast<double>((c.components.size() + c.mean.size()) * sizeof(float));
  return static_cast<double>(num_tokens * n_components_ * static_cast<Index>(sizeof(float))) +
         shared / static_cast<double>(c.ids.size());
}

}  // namespace acl
