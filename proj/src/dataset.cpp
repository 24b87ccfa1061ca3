#include "acl/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "acl/binary_io.hpp"
#include "acl/rng.hpp"

namespace acl {
namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

constexpr char kDatasetMagic[8] = {'A', 'C', 'L', 'D', 'S', 'E', 'T', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

VectorXd gaussian_vector(Rng& rng, Index d) {
  VectorXd v(d);
  for (Index i = 0; i < d; ++i) v[i] = rng.normal();
  return v;
}

VectorXd random_unit(Rng& rng, Index d) {
  VectorXd v;
  do {
    v = gaussian_vector(rng, d);
  } while (v.norm() == 0.0);
  return v / v.norm();
}

}  // namespace

Index Dataset::dim() const {
  if (table.dim() > 0) return table.dim();
  return samples.empty() ? 0 : materialize(samples.front().payload).dim();
}

Index Dataset::num_tokens() const {
  if (samples.empty()) return 0;
  const auto& p = samples.front().payload;
  if (const auto* t = std::get_if<TokenMatrix>(&p)) return t->num_tokens();
  return std::get<CompressedFeature>(p).num_tokens;
}

std::vector<std::size_t> Dataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (samples[i].split == split) out.push_back(i);
  return out;
}

LabelSet Dataset::labels_of_task(std::int32_t task) const {
  LabelSet out;
  for (const auto& [label, t] : task_of)
    if (t == task) out.insert(label);
  return out;
}

std::int32_t Dataset::num_tasks() const {
  std::int32_t n = 0;
  for (const auto& [label, t] : task_of) n = std::max(n, t + 1);
  return n;
}

void SyntheticSpec::validate() const {
  if (num_classes < 1) throw ConfigError("num_classes", "must be >= 1");
  if (samples_per_class < 1) throw ConfigError("samples_per_class", "must be >= 1");
  if (test_samples_per_class < 0) throw ConfigError("test_samples_per_class", "must be >= 0");
  if (dim < 1) throw ConfigError("dim", "must be >= 1");
  if (num_tokens < 2) throw ConfigError("num_tokens", "must be >= 2");
  if (!(sigma >= 0.0)) throw ConfigError("sigma", "must be >= 0");
  if (!(separation > 0.0)) throw ConfigError("separation", "must be > 0");
  if (!(domain_shift >= 0.0)) throw ConfigError("domain_shift", "must be >= 0");
  if (!(patch_spread >= 0.0)) throw ConfigError("patch_spread", "must be >= 0");
  if (patch_rank < 0 || patch_rank > dim) throw ConfigError("patch_rank", "must be in [0, dim]");
  if (!(patch_noise >= 0.0)) throw ConfigError("patch_noise", "must be >= 0");
  if (num_tasks < 1 || num_tasks > num_classes) throw ConfigError("num_tasks", "must be in [1, num_classes]");
}

Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  const Index d = spec.dim;
  const double max_cos = 1.0 - spec.separation * spec.separation / 2.0;
  if (max_cos < -1.0) throw ConfigError("separation", "exceeds the diameter of the unit sphere");

  Rng center_rng(Rng::derive(spec.seed, rng_stream::kCenters));
  std::vector<VectorXd> centers;
  constexpr int kMaxAttempts = 10000;
  for (std::int64_t c = 0; c < spec.num_classes; ++c) {
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
      VectorXd v = random_unit(center_rng, d);
      placed = std::all_of(centers.begin(), centers.end(), [&](const VectorXd& u) { return u.dot(v) <= max_cos; });
      if (placed) centers.push_back(std::move(v));
    }
    if (!placed)
      throw ConfigError("separation", "cannot place " + std::to_string(spec.num_classes) + " centers in dimension " +
                                          std::to_string(spec.dim) + " at this separation");
  }

  Rng shift_rng(Rng::derive(spec.seed, rng_stream::kShift));
  std::vector<VectorXd> shifts;
  for (std::int64_t c = 0; c < spec.num_classes; ++c)
    shifts.push_back(spec.domain_shift > 0.0 ? VectorXd(spec.domain_shift * random_unit(shift_rng, d))
                                             : VectorXd(VectorXd::Zero(d)));

  Dataset ds;
  ds.table = LabelEmbeddingTable(d);
  for (std::int64_t c = 0; c < spec.num_classes; ++c) {
    const LabelId id{static_cast<std::int32_t>(c)};
    ds.table.insert(id, centers[static_cast<std::size_t>(c)].cast<float>());
    // Contiguous class groups per task; earlier tasks take the remainder.
    const std::int64_t base = spec.num_classes / spec.num_tasks;
    const std::int64_t extra = spec.num_classes % spec.num_tasks;
    std::int64_t task = 0;
    std::int64_t end = base + (extra > 0 ? 1 : 0);
    while (c >= end) {
      ++task;
      end += base + (task < extra ? 1 : 0);
    }
    ds.task_of[id] = static_cast<std::int32_t>(task);
  }

  const std::uint64_t noise_seed = Rng::derive(spec.seed, rng_stream::kSampleNoise);
  std::uint64_t sample_index = 0;
  auto make_sample = [&](std::int64_t c) {
    Rng rng(Rng::derive(noise_seed, sample_index++));
    const auto& center = centers[static_cast<std::size_t>(c)];
    VectorXd cls = center + shifts[static_cast<std::size_t>(c)] + spec.sigma * gaussian_vector(rng, d);
    if (cls.norm() == 0.0) cls = center;
    cls /= cls.norm();
    MatrixXd basis(spec.patch_rank, d);
    for (Index j = 0; j < spec.patch_rank; ++j) basis.row(j) = random_unit(rng, d).transpose();
    MatrixXd tokens(spec.num_tokens, d);
    tokens.row(0) = cls.transpose();
    for (Index t = 1; t < spec.num_tokens; ++t) {
      VectorXd p = cls;
      for (Index j = 0; j < spec.patch_rank; ++j) p += spec.patch_spread * rng.normal() * basis.row(j).transpose();
      p += spec.patch_noise * gaussian_vector(rng, d);
      tokens.row(t) = p.transpose();
    }
    return TokenMatrix(tokens.cast<float>());
  };

  for (std::int64_t c = 0; c < spec.num_classes; ++c)
    for (std::int64_t i = 0; i < spec.samples_per_class; ++i)
      ds.samples.push_back({LabelId{static_cast<std::int32_t>(c)}, Split::Train, make_sample(c)});
  for (std::int64_t c = 0; c < spec.num_classes; ++c)
    for (std::int64_t i = 0; i < spec.test_samples_per_class; ++i)
      ds.samples.push_back({LabelId{static_cast<std::int32_t>(c)}, Split::Test, make_sample(c)});
  return ds;
}

// ---- container ------------------------------------------------------------

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  const Index d = ds.dim();
  const Index t = ds.num_tokens();
  ByteWriter w;
  w.put_bytes(std::string_view(kDatasetMagic, 8));
  w.put_u32(kDatasetVersion);
  w.put_u32(static_cast<std::uint32_t>(d));
  w.put_u32(static_cast<std::uint32_t>(t));
  w.put_u32(static_cast<std::uint32_t>(ds.table.size()));
  w.put_u64(ds.samples.size());
  w.put_u32(static_cast<std::uint32_t>(ds.metadata.size()));
  w.put_bytes(ds.metadata);
  for (const auto& [id, e] : ds.table.entries()) {
    w.put_i32(id.value);
    auto it = ds.task_of.find(id);
    w.put_i32(it == ds.task_of.end() ? -1 : it->second);
    for (Index i = 0; i < e.size(); ++i) w.put_f32(e[i]);
  }
  for (const auto& s : ds.samples) {
    w.put_i32(s.label.value);
    w.put_u8(static_cast<std::uint8_t>(s.split));
    if (const auto* tm = std::get_if<TokenMatrix>(&s.payload)) {
      if (tm->dim() != d || tm->num_tokens() != t) throw ArgumentError("serialize_dataset: inconsistent sample shape");
      w.put_u8(0);
      w.put_u16(0);
      const auto& m = tm->matrix();
      for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) w.put_f32(m(r, c));
    } else {
      const auto& cf = std::get<CompressedFeature>(s.payload);
      if (cf.dim != d || cf.num_tokens != t) throw ArgumentError("serialize_dataset: inconsistent sample shape");
      w.put_u8(1);
      w.put_u16(0);
      write_compressed_feature(w, cf);
    }
  }
  return w.take();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic(std::string_view(kDatasetMagic, 8), "dataset");
  const std::size_t version_at = r.offset();
  if (r.get_u32() != kDatasetVersion) throw FormatError("unsupported dataset version", version_at);
  const std::size_t header_at = r.offset();
  const Index d = r.get_u32();
  const Index t = r.get_u32();
  const std::uint32_t n_labels = r.get_u32();
  const std::uint64_t n_samples = r.get_u64();
  if (n_samples > 0 && (d < 1 || t < 1)) throw FormatError("dataset header has zero dimension", header_at);

  Dataset ds;
  const auto meta = r.get_span(r.get_u32());
  ds.metadata.assign(meta.begin(), meta.end());
  ds.table = LabelEmbeddingTable(d);
  for (std::uint32_t i = 0; i < n_labels; ++i) {
    const std::size_t at = r.offset();
    const LabelId id{r.get_i32()};
    const std::int32_t task = r.get_i32();
    Embedding e(d);
    for (Index k = 0; k < d; ++k) e[k] = r.get_f32();
    try {
      ds.table.insert(id, e);
    } catch (const ArgumentError& err) {
      throw FormatError(std::string("invalid label entry: ") + err.what(), at);
    }
    if (task >= 0) ds.task_of[id] = task;
  }
  if (n_samples > r.remaining()) throw FormatError("sample count exceeds file size", header_at);
  ds.samples.reserve(static_cast<std::size_t>(n_samples));
  for (std::uint64_t i = 0; i < n_samples; ++i) {
    const std::size_t at = r.offset();
    DatasetSample s;
    s.label = LabelId{r.get_i32()};
    const std::uint8_t split = r.get_u8();
    const std::uint8_t kind = r.get_u8();
    r.get_u16();
    if (split > 1) throw FormatError("invalid split flag", at);
    if (n_labels > 0 && !ds.table.contains(s.label)) throw FormatError("sample label missing from label table", at);
    s.split = static_cast<Split>(split);
    if (kind == 0) {
      const auto raw = r.get_span(static_cast<std::size_t>(t * d) * sizeof(float));
      ByteReader pr(raw);
      Eigen::MatrixXf m(t, d);
      for (Index a = 0; a < t; ++a)
        for (Index b = 0; b < d; ++b) m(a, b) = pr.get_f32();
      if (!all_finite(m)) throw FormatError("non-finite token value", at);
      s.payload = TokenMatrix(std::move(m));
    } else if (kind == 1) {
      auto cf = read_compressed_feature(r);
      if (cf.dim != d || cf.num_tokens != t) throw FormatError("compressed sample shape disagrees with header", at);
      s.payload = std::move(cf);
    } else {
      throw FormatError("unknown payload kind", at);
    }
    ds.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after dataset", r.offset());
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) { write_file_bytes(path, serialize_dataset(ds)); }

Dataset load_dataset(const std::string& path) { return deserialize_dataset(read_file_bytes(path)); }

}  // namespace acl
