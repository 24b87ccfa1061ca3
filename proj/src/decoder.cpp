#include "acl/decoder.hpp"

#include <cmath>
#include <numbers>

#include "acl/binary_io.hpp"

namespace acl {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---- layer norm -----------------------------------------------------------

struct NormCache {
  VectorXd xhat;
  double rstd = 0.0;
};

VectorXd layer_norm(const VectorXd& x, const VectorXd& gain, const VectorXd& bias, NormCache* cache = nullptr) {
  const double mu = x.mean();
  const VectorXd centered = x.array() - mu;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  VectorXd xhat = centered * rstd;
  VectorXd y = gain.cwiseProduct(xhat) + bias;
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = rstd;
  }
  return y;
}

MatrixXd layer_norm_rows(const MatrixXd& x, const VectorXd& gain, const VectorXd& bias,
                         std::vector<NormCache>* caches = nullptr) {
  MatrixXd out(x.rows(), x.cols());
  if (caches != nullptr) caches->resize(static_cast<std::size_t>(x.rows()));
  for (Index t = 0; t < x.rows(); ++t) {
    NormCache* c = caches != nullptr ? &(*caches)[static_cast<std::size_t>(t)] : nullptr;
    out.row(t) = layer_norm(x.row(t).transpose(), gain, bias, c).transpose();
  }
  return out;
}

// Accumulates gain/bias gradients and returns dL/dx.
VectorXd layer_norm_backward(const VectorXd& dy, const VectorXd& gain, const NormCache& c, VectorXd& dgain,
                             VectorXd& dbias) {
  dgain += dy.cwiseProduct(c.xhat);
  dbias += dy;
  const VectorXd dxhat = dy.cwiseProduct(gain);
  const double n = static_cast<double>(dy.size());
  const double mean_dxhat = dxhat.sum() / n;
  const double mean_dxhat_xhat = dxhat.dot(c.xhat) / n;
  return c.rstd * (dxhat.array() - mean_dxhat - c.xhat.array() * mean_dxhat_xhat).matrix();
}

// ---- activation -----------------------------------------------------------

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

// ---- block forward / backward for the CLS row ----------------------------

struct BlockCache {
  std::vector<NormCache> ln1;  // per token
  MatrixXd normed;             // T x D, LN1 output
  VectorXd q;                  // D
  MatrixXd k, v;               // T x D
  VectorXd attn;               // T, softmax weights of the CLS query
  VectorXd ctx;                // D
  VectorXd h;                  // D, CLS after attention residual
  NormCache ln2;
  VectorXd n2;   // D
  VectorXd m1;   // 4D, pre-activation
  VectorXd act;  // 4D
  VectorXd out;  // D
};

void block_forward_cls(const MatrixXd& x, const BlockParams& p, BlockCache& c) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  c.normed = layer_norm_rows(x, p.ln1_gain, p.ln1_bias, &c.ln1);
  c.q = p.wq.transpose() * c.normed.row(0).transpose();
  c.k = c.normed * p.wk;
  c.v = c.normed * p.wv;
  c.attn = stable_softmax(c.k * c.q * scale);
  c.ctx = c.v.transpose() * c.attn;
  c.h = x.row(0).transpose() + p.wo.transpose() * c.ctx;
  c.n2 = layer_norm(c.h, p.ln2_gain, p.ln2_bias, &c.ln2);
  c.m1 = p.mlp_w1.transpose() * c.n2 + p.mlp_b1;
  c.act = c.m1.unaryExpr([](double v) { return gelu(v); });
  c.out = c.h + p.mlp_w2.transpose() * c.act + p.mlp_b2;
}

void block_backward_cls(const MatrixXd& x, const BlockParams& p, const BlockCache& c, const VectorXd& dout,
                        BlockParams& g) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  // MLP branch.
  g.mlp_w2 += c.act * dout.transpose();
  g.mlp_b2 += dout;
  const VectorXd dm1 = (p.mlp_w2 * dout).cwiseProduct(c.m1.unaryExpr([](double v) { return gelu_grad(v); }));
  g.mlp_w1 += c.n2 * dm1.transpose();
  g.mlp_b1 += dm1;
  const VectorXd dn2 = p.mlp_w1 * dm1;
  const VectorXd dh = dout + layer_norm_backward(dn2, p.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias);

  // Attention branch.
  g.wo += c.ctx * dh.transpose();
  const VectorXd dctx = p.wo * dh;
  const MatrixXd dv = c.attn * dctx.transpose();  // T x D
  const VectorXd da = c.v * dctx;                 // T
  const VectorXd ds = c.attn.cwiseProduct((da.array() - c.attn.dot(da)).matrix());
  const VectorXd dq = c.k.transpose() * ds * scale;  // D
  const MatrixXd dk = ds * c.q.transpose() * scale;  // T x D

  g.wq += c.normed.row(0).transpose() * dq.transpose();
  g.wk += c.normed.transpose() * dk;
  g.wv += c.normed.transpose() * dv;
  MatrixXd dnormed = dk * p.wk.transpose() + dv * p.wv.transpose();
  dnormed.row(0) += (p.wq * dq).transpose();
  for (Index t = 0; t < x.rows(); ++t)
    layer_norm_backward(dnormed.row(t).transpose(), p.ln1_gain, c.ln1[static_cast<std::size_t>(t)], g.ln1_gain,
                        g.ln1_bias);
}

void check_tokens(const MatrixXd& tokens, const DecoderParams& params) {
  if (tokens.rows() < 1 || tokens.cols() != params.d_in)
    throw ArgumentError("decode: token dimension " + std::to_string(tokens.cols()) + " does not match decoder input " +
                        std::to_string(params.d_in));
}

// ---- loss -----------------------------------------------------------------

struct SampleLoss {
  double loss;
  VectorXd dlogits;  // over candidates then OTHER
};

SampleLoss sample_loss(const VectorXd& z, Index target, double beta) {
  const Index other = z.size() - 1;
  const VectorXd p = stable_softmax(z);
  double loss = log_sum_exp(z) - z[target];
  VectorXd dz = p;
  dz[target] -= 1.0;

  // Second term over (Y u OTHER) \ y. With |Y| = 1 the set is {OTHER} alone and contributes 0.
  if (z.size() > 2) {
    VectorXd rest(z.size() - 1);
    for (Index i = 0, j = 0; i < z.size(); ++i)
      if (i != target) rest[j++] = z[i];
    const VectorXd q = stable_softmax(rest);
    loss += beta * (log_sum_exp(rest) - z[other]);
    for (Index i = 0, j = 0; i < z.size(); ++i)
      if (i != target) dz[i] += beta * q[j++];
    dz[other] -= beta;
  }
  return {loss, dz};
}

void check_batch(const TrainingBatch& batch, double beta) {
  if (batch.samples.empty()) throw ArgumentError("training batch is empty");
  if (!(beta >= 0.0)) throw ArgumentError("beta must be non-negative");
  if (batch.candidates.empty()) throw ArgumentError("training batch has no candidate labels");
  for (const auto& s : batch.samples)
    if (batch.candidates.count(s.label) == 0)
      throw ArgumentError("true label " + std::to_string(s.label.value) + " missing from candidate set");
}

const char* kCheckpointMagic = "ACLCKPT1";
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

// ---- parameter bookkeeping ------------------------------------------------

std::vector<TensorView> DecoderParams::tensors() {
  std::vector<TensorView> out;
  auto add = [&out](std::string_view name, auto& t, bool decay) {
    out.push_back({name, t.data(), t.rows(), t.cols(), decay});
  };
  if (variant == DecoderVariant::Linear) {
    add("linear.weight", linear.weight, true);
    add("linear.bias", linear.bias, true);
  } else {
    add("block.wq", block.wq, true);
    add("block.wk", block.wk, true);
    add("block.wv", block.wv, true);
    add("block.wo", block.wo, true);
    add("block.ln1_gain", block.ln1_gain, true);
    add("block.ln1_bias", block.ln1_bias, true);
    add("block.ln2_gain", block.ln2_gain, true);
    add("block.ln2_bias", block.ln2_bias, true);
    add("block.mlp_w1", block.mlp_w1, true);
    add("block.mlp_b1", block.mlp_b1, true);
    add("block.mlp_w2", block.mlp_w2, true);
    add("block.mlp_b2", block.mlp_b2, true);
  }
  out.push_back({"other_logit", &other_logit, 1, 1, false});
  return out;
}

std::vector<ConstTensorView> DecoderParams::tensors() const {
  std::vector<ConstTensorView> out;
  for (const auto& t : const_cast<DecoderParams*>(this)->tensors())
    out.push_back({t.name, t.data, t.rows, t.cols, t.weight_decay});
  return out;
}

Index DecoderParams::num_values() const {
  Index n = 0;
  for (const auto& t : tensors()) n += t.size();
  return n;
}

DecoderParams DecoderParams::zeros_like() const {
  DecoderParams z = *this;
  for (auto& t : z.tensors()) std::fill(t.data, t.data + t.size(), 0.0);
  return z;
}

VectorXd DecoderParams::flatten() const {
  VectorXd flat(num_values());
  Index k = 0;
  for (const auto& t : tensors()) {
    flat.segment(k, t.size()) = Eigen::Map<const VectorXd>(t.data, t.size());
    k += t.size();
  }
  return flat;
}

void DecoderParams::assign_flat(const VectorXd& flat) {
  if (flat.size() != num_values()) throw ArgumentError("assign_flat: size mismatch");
  Index k = 0;
  for (auto& t : tensors()) {
    Eigen::Map<VectorXd>(t.data, t.size()) = flat.segment(k, t.size());
    k += t.size();
  }
}

DecoderParams make_decoder(DecoderVariant variant, Index d_in, Index d_out, std::uint64_t seed, double init_scale) {
  if (d_in < 1 || d_out < 1) throw ArgumentError("make_decoder: dimensions must be positive");
  Rng rng(Rng::derive(seed, rng_stream::kDecoderInit));
  auto gaussian = [&rng](Index r, Index c, double s) {
    MatrixXd m(r, c);
    for (Index j = 0; j < c; ++j)
      for (Index i = 0; i < r; ++i) m(i, j) = s * rng.normal();
    return m;
  };
  DecoderParams p;
  p.variant = variant;
  p.d_in = d_in;
  p.d_out = d_out;
  if (variant == DecoderVariant::Linear) {
    p.linear.weight = d_in == d_out ? MatrixXd::Identity(d_out, d_in)
                                    : gaussian(d_out, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)));
    p.linear.bias = VectorXd::Zero(d_out);
  } else {
    if (d_in != d_out) throw ArgumentError("make_decoder: transformer block requires d_in == d_out");
    const Index d = d_in;
    auto& b = p.block;
    b.wq = gaussian(d, d, init_scale);
    b.wk = gaussian(d, d, init_scale);
    b.wv = gaussian(d, d, init_scale);
    b.wo = MatrixXd::Zero(d, d);
    b.ln1_gain = VectorXd::Ones(d);
    b.ln1_bias = VectorXd::Zero(d);
    b.ln2_gain = VectorXd::Ones(d);
    b.ln2_bias = VectorXd::Zero(d);
    b.mlp_w1 = gaussian(d, 4 * d, init_scale);
    b.mlp_b1 = VectorXd::Zero(4 * d);
    b.mlp_w2 = MatrixXd::Zero(4 * d, d);
    b.mlp_b2 = VectorXd::Zero(d);
  }
  return p;
}

// ---- forward --------------------------------------------------------------

VectorXd decode(const MatrixXd& tokens, const DecoderParams& params) {
  check_tokens(tokens, params);
  if (params.variant == DecoderVariant::Linear)
    return params.linear.weight * tokens.row(0).transpose() + params.linear.bias;
  BlockCache cache;
  block_forward_cls(tokens, params.block, cache);
  return cache.out;
}

Embedding decode(const TokenMatrix& tokens, const DecoderParams& params) {
  return decode(tokens.as_double(), params).cast<float>();
}

MatrixXd block_forward_all(const MatrixXd& x, const BlockParams& p) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  const MatrixXd a = layer_norm_rows(x, p.ln1_gain, p.ln1_bias);
  const MatrixXd q = a * p.wq;
  const MatrixXd k = a * p.wk;
  const MatrixXd v = a * p.wv;
  const MatrixXd scores = q * k.transpose() * scale;
  MatrixXd weights(scores.rows(), scores.cols());
  for (Index t = 0; t < scores.rows(); ++t) weights.row(t) = stable_softmax(scores.row(t).transpose()).transpose();
  const MatrixXd h = x + weights * v * p.wo;
  const MatrixXd n2 = layer_norm_rows(h, p.ln2_gain, p.ln2_bias);
  const MatrixXd m1 = (n2 * p.mlp_w1).rowwise() + p.mlp_b1.transpose();
  const MatrixXd act = m1.unaryExpr([](double v) { return gelu(v); });
  return h + ((act * p.mlp_w2).rowwise() + p.mlp_b2.transpose());
}

// ---- logits and loss ------------------------------------------------------

Index AugmentedLogits::index_of(LabelId y) const {
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == y) return static_cast<Index>(i);
  throw LookupError("label not among candidates: " + std::to_string(y.value));
}

AugmentedLogits augmented_logits(const VectorXd& e, const LabelEmbeddingTable& table, const LabelSet& candidates,
                                 double other_logit) {
  if (candidates.empty()) throw ArgumentError("augmented_logits: empty candidate set");
  AugmentedLogits out;
  out.labels.assign(candidates.begin(), candidates.end());
  out.values.resize(static_cast<Index>(candidates.size()) + 1);
  out.values.head(static_cast<Index>(candidates.size())) = scaled_cosine_logits(e, table, candidates);
  out.values[out.other_index()] = other_logit;
  return out;
}

double combined_loss(const TrainingBatch& batch, const DecoderParams& params, const LabelEmbeddingTable& table,
                     double beta) {
  check_batch(batch, beta);
  double total = 0.0;
  for (const auto& s : batch.samples) {
    const auto logits = augmented_logits(decode(s.tokens, params), table, batch.candidates, params.other_logit);
    total += sample_loss(logits.values, logits.index_of(s.label), beta).loss;
  }
  return total / static_cast<double>(batch.samples.size());
}

LossGradient loss_gradients(const TrainingBatch& batch, const DecoderParams& params, const LabelEmbeddingTable& table,
                            double beta) {
  check_batch(batch, beta);
  LossGradient out{0.0, params.zeros_like()};
  const double inv_n = 1.0 / static_cast<double>(batch.samples.size());
  const std::vector<LabelId> labels(batch.candidates.begin(), batch.candidates.end());

  for (const auto& s : batch.samples) {
    check_tokens(s.tokens, params);
    BlockCache cache;
    VectorXd e;
    if (params.variant == DecoderVariant::Linear) {
      e = params.linear.weight * s.tokens.row(0).transpose() + params.linear.bias;
    } else {
      block_forward_cls(s.tokens, params.block, cache);
      e = cache.out;
    }
    const auto logits = augmented_logits(e, table, batch.candidates, params.other_logit);
    const auto sl = sample_loss(logits.values, logits.index_of(s.label), beta);
    out.loss += sl.loss * inv_n;
    out.grad.other_logit += sl.dlogits[logits.other_index()] * inv_n;

    // logit_k = 100 * y_k . e / |e|  =>  de = 100/|e| * (w - (w.u) u), w = sum_k dz_k y_k.
    const double norm = e.norm();
    const VectorXd u = e / norm;
    VectorXd w = VectorXd::Zero(e.size());
    for (std::size_t k = 0; k < labels.size(); ++k) w += sl.dlogits[static_cast<Index>(k)] * table.at_double(labels[k]);
    const VectorXd de = (kTemperature / norm) * (w - w.dot(u) * u) * inv_n;

    if (params.variant == DecoderVariant::Linear) {
      out.grad.linear.weight += de * s.tokens.row(0);
      out.grad.linear.bias += de;
    } else {
      block_backward_cls(s.tokens, params.block, cache, de, out.grad.block);
    }
  }
  return out;
}

// ---- checkpoint -----------------------------------------------------------

std::vector<std::uint8_t> serialize_decoder(const DecoderParams& params, std::string_view metadata) {
  ByteWriter w;
  w.put_bytes(std::string_view(kCheckpointMagic, 8));
  w.put_u32(kCheckpointVersion);
  w.put_u32(static_cast<std::uint32_t>(metadata.size()));
  w.put_bytes(metadata);
  w.put_u32(static_cast<std::uint32_t>(params.variant));
  w.put_u32(static_cast<std::uint32_t>(params.d_in));
  w.put_u32(static_cast<std::uint32_t>(params.d_out));
  const auto views = params.tensors();
  w.put_u32(static_cast<std::uint32_t>(views.size()));
  for (const auto& t : views) {
    w.put_u32(static_cast<std::uint32_t>(t.name.size()));
    w.put_bytes(t.name);
    w.put_u32(static_cast<std::uint32_t>(t.rows));
    w.put_u32(static_cast<std::uint32_t>(t.cols));
    for (Index i = 0; i < t.size(); ++i) w.put_f32(static_cast<float>(t.data[i]));
  }
  return w.take();
}

DecoderParams deserialize_decoder(std::span<const std::uint8_t> bytes, std::string* metadata) {
  ByteReader r(bytes);
  r.expect_magic(std::string_view(kCheckpointMagic, 8), "decoder checkpoint");
  const std::size_t version_at = r.offset();
  if (r.get_u32() != kCheckpointVersion) throw FormatError("unsupported checkpoint version", version_at);
  const auto meta = r.get_span(r.get_u32());
  if (metadata != nullptr) metadata->assign(meta.begin(), meta.end());
  const std::size_t variant_at = r.offset();
  const std::uint32_t variant = r.get_u32();
  if (variant > 1) throw FormatError("unknown decoder variant", variant_at);
  const Index d_in = r.get_u32();
  const Index d_out = r.get_u32();
  if (d_in < 1 || d_out < 1 || (variant == 1 && d_in != d_out))
    throw FormatError("invalid decoder dimensions", variant_at);
  DecoderParams p = make_decoder(static_cast<DecoderVariant>(variant), d_in, d_out, 0).zeros_like();
  auto views = p.tensors();
  const std::size_t count_at = r.offset();
  if (r.get_u32() != views.size()) throw FormatError("tensor count does not match variant", count_at);
  for (auto& t : views) {
    const std::size_t at = r.offset();
    const std::uint32_t len = r.get_u32();
    const auto name = r.get_span(len);
    if (std::string_view(reinterpret_cast<const char*>(name.data()), name.size()) != t.name)
      throw FormatError("unexpected tensor name, wanted " + std::string(t.name), at);
    const Index rows = r.get_u32();
    const Index cols = r.get_u32();
    if (rows != t.rows || cols != t.cols) throw FormatError("tensor shape mismatch for " + std::string(t.name), at);
    for (Index i = 0; i < t.size(); ++i) t.data[i] = r.get_f32();
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint", r.offset());
  return p;
}

void save_decoder(const DecoderParams& params, const std::string& path, std::string_view metadata) {
  write_file_bytes(path, serialize_decoder(params, metadata));
}

DecoderParams load_decoder(const std::string& path, std::string* metadata) {
  return deserialize_decoder(read_file_bytes(path), metadata);
}

}  // namespace acl
