#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "acl/compression.hpp"
#include "acl/embedding.hpp"
#include "acl/replay_store.hpp"

namespace acl {

enum class Split : std::uint8_t { Train = 0, Test = 1 };

struct DatasetSample {
  LabelId label;
  Split split = Split::Train;
  Payload payload;
};

struct Dataset {
  LabelEmbeddingTable table;
  std::map<LabelId, std::int32_t> task_of;  // optional task partition
  std::vector<DatasetSample> samples;
  std::string metadata;  // free-form header string (config hash, seed)

  Eigen::Index dim() const;
  Eigen::Index num_tokens() const;
  std::vector<std::size_t> indices(Split split) const;
  LabelSet labels_of_task(std::int32_t task) const;
  std::int32_t num_tasks() const;
};

// Desk-scale stand-in for pretrained encoder features.
struct SyntheticSpec {
  std::int64_t num_classes = 10;
  std::int64_t samples_per_class = 100;
  std::int64_t test_samples_per_class = 50;
  std::int64_t dim = 64;
  std::int64_t num_tokens = 10;
  double sigma = 0.05;        // per-coordinate CLS noise
  double separation = 1.0;    // minimum Euclidean distance between unit class centers
  double domain_shift = 0.0;  // per-class offset the label embeddings do not know about
  double patch_spread = 0.3;
  std::int64_t patch_rank = 3;
  double patch_noise = 0.005;
  std::int64_t num_tasks = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

// Centers: rejection-sampled random unit vectors with pairwise cos <= 1 - s^2/2.
// CLS = normalize(center + shift_c + sigma * N(0, I)); patches = CLS plus a
// rank-limited random spread plus small isotropic noise. Label embeddings are
// the centers. Train samples are stored class by class, then test samples.
Dataset generate(const SyntheticSpec& spec);

// Versioned container; layout in docs/FORMATS.md.
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace acl
