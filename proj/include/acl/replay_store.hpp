#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "acl/compression.hpp"
#include "acl/embedding.hpp"
#include "acl/rng.hpp"

namespace acl {

using SampleId = std::int64_t;

using Payload = std::variant<TokenMatrix, CompressedFeature>;

// Token matrix for training: reconstructed if the payload is compressed.
TokenMatrix materialize(const Payload& payload);

struct StoredSample {
  SampleId id = 0;
  LabelId label;
  Payload payload;
  double fws_weight = 1.0;  // max(xi^batch_count, w_min)
  std::int64_t batch_count = 0;
};

enum class SamplerStrategy { FIFO, Uniform, ClassBalanced, FWS };

struct SamplerConfig {
  SamplerStrategy strategy = SamplerStrategy::FWS;
  std::size_t batch_size = 32;
  double xi = 0.99;
  double w_min = 0.01;
  std::uint64_t seed = 0;

  void validate() const;
};

const char* to_string(SamplerStrategy s);
SamplerStrategy parse_sampler_strategy(const std::string& s);

// Keeps every received sample (no eviction) and composes replay batches.
class ReplayStore {
 public:
  SampleId insert(LabelId label, Payload payload);

  const StoredSample& at(SampleId id) const;
  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  const LabelSet& seen_labels() const { return seen_; }
  const std::vector<SampleId>& ids_with_label(LabelId label) const;
  const std::vector<StoredSample>& samples() const { return samples_; }

  // new_id plus up to B-1 companions chosen by the configured strategy.
  std::vector<SampleId> compose_batch(SampleId new_id, const SamplerConfig& config, Rng& rng) const;

  // batch_count += 1 and fws_weight <- max(xi^batch_count, w_min) for every id.
  void record_batched(const std::vector<SampleId>& ids, const SamplerConfig& config);

  // Restores per-sample counters after loading a snapshot.
  void restore_counters(SampleId id, std::int64_t batch_count, const SamplerConfig& config);

 private:
  StoredSample& mutable_at(SampleId id);

  std::vector<StoredSample> samples_;
  std::map<LabelId, std::vector<SampleId>> by_label_;
  LabelSet seen_;
};

// Snapshot: binary sample container plus a CSV sidecar (id,label,batch_count).
void save_store(const ReplayStore& store, const std::string& bin_path, const std::string& csv_path);
ReplayStore load_store(const std::string& bin_path, const std::string& csv_path, const SamplerConfig& config);

}  // namespace acl
