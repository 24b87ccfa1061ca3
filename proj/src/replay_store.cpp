#include "acl/replay_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "acl/binary_io.hpp"
#include "acl/dataset.hpp"

namespace acl {

TokenMatrix materialize(const Payload& payload) {
  if (const auto* t = std::get_if<TokenMatrix>(&payload)) return *t;
  return TokenMatrix(reconstruct(std::get<CompressedFeature>(payload)));
}

void SamplerConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(xi >= 0.0 && xi <= 1.0)) throw ConfigError("xi", "must be in [0, 1]");
  if (!(w_min > 0.0 && w_min <= 1.0)) throw ConfigError("w_min", "must be in (0, 1]");
}

const char* to_string(SamplerStrategy s) {
  switch (s) {
    case SamplerStrategy::FIFO: return "fifo";
    case SamplerStrategy::Uniform: return "uniform";
    case SamplerStrategy::ClassBalanced: return "class_balanced";
    case SamplerStrategy::FWS: return "fws";
  }
  return "?";
}

SamplerStrategy parse_sampler_strategy(const std::string& s) {
  if (s == "fifo") return SamplerStrategy::FIFO;
  if (s == "uniform") return SamplerStrategy::Uniform;
  if (s == "class_balanced") return SamplerStrategy::ClassBalanced;
  if (s == "fws") return SamplerStrategy::FWS;
  throw ConfigError("sampler", "unknown strategy '" + s + "'");
}

SampleId ReplayStore::insert(LabelId label, Payload payload) {
  const auto id = static_cast<SampleId>(samples_.size());
  samples_.push_back(StoredSample{id, label, std::move(payload), 1.0, 0});
  by_label_[label].push_back(id);
  seen_.insert(label);
  return id;
}

const StoredSample& ReplayStore::at(SampleId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= samples_.size())
    throw ArgumentError("unknown sample id " + std::to_string(id));
  return samples_[static_cast<std::size_t>(id)];
}

StoredSample& ReplayStore::mutable_at(SampleId id) { return const_cast<StoredSample&>(std::as_const(*this).at(id)); }

const std::vector<SampleId>& ReplayStore::ids_with_label(LabelId label) const {
  auto it = by_label_.find(label);
  if (it == by_label_.end()) throw LookupError("no stored samples with label " + std::to_string(label.value));
  return it->second;
}

std::vector<SampleId> ReplayStore::compose_batch(SampleId new_id, const SamplerConfig& config, Rng& rng) const {
  at(new_id);
  std::vector<SampleId> batch{new_id};
  const std::size_t others = samples_.size() - 1;
  const std::size_t want = std::min(config.batch_size - 1, others);
  if (want == 0) return batch;

  switch (config.strategy) {
    case SamplerStrategy::FIFO: {
      // Most recent first, skipping the new sample itself.
      for (auto id = static_cast<SampleId>(samples_.size()) - 1; id >= 0 && batch.size() < want + 1; --id)
        if (id != new_id) batch.push_back(id);
      break;
    }
    case SamplerStrategy::Uniform: {
      for (std::size_t i = 0; i < want; ++i) {
        auto pick = static_cast<SampleId>(rng.uniform_index(others));
        if (pick >= new_id) ++pick;
        batch.push_back(pick);
      }
      break;
    }
    case SamplerStrategy::ClassBalanced: {
      // Eligible pool excludes the new sample, so a class holding only it is skipped.
      std::vector<LabelId> classes;
      std::map<LabelId, std::vector<SampleId>> pool;
      for (const auto& [label, ids] : by_label_) {
        std::vector<SampleId> eligible;
        for (SampleId id : ids)
          if (id != new_id) eligible.push_back(id);
        if (!eligible.empty()) {
          classes.push_back(label);
          pool.emplace(label, std::move(eligible));
        }
      }
      const std::size_t slots = config.batch_size - 1;
      const std::size_t k = std::min(slots, classes.size());
      // Partial Fisher-Yates: the first k entries are the chosen classes in draw order.
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.uniform_index(classes.size() - i);
        std::swap(classes[i], classes[j]);
      }
      const std::size_t per_class = slots / k;
      const std::size_t remainder = slots % k;
      for (std::size_t i = 0; i < k; ++i) {
        std::vector<SampleId> ids = pool.at(classes[i]);
        const std::size_t count = per_class + (i < remainder ? 1 : 0);
        if (ids.size() >= count) {
          for (std::size_t c = 0; c < count; ++c) {
            const std::size_t j = c + rng.uniform_index(ids.size() - c);
            std::swap(ids[c], ids[j]);
            batch.push_back(ids[c]);
          }
        } else {
          for (std::size_t c = 0; c < count; ++c) batch.push_back(ids[rng.uniform_index(ids.size())]);
        }
      }
      break;
    }
    case SamplerStrategy::FWS: {
      // Sequential weighted draws without replacement.
      std::vector<SampleId> candidates;
      std::vector<double> weights;
      candidates.reserve(others);
      weights.reserve(others);
      for (const auto& s : samples_)
        if (s.id != new_id) {
          candidates.push_back(s.id);
          weights.push_back(s.fws_weight);
        }
      for (std::size_t i = 0; i < want; ++i) {
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        const double target = rng.uniform01() * total;
        double acc = 0.0;
        std::size_t pick = weights.size() - 1;
        for (std::size_t j = 0; j < weights.size(); ++j) {
          acc += weights[j];
          if (target < acc) {
            pick = j;
            break;
          }
        }
        batch.push_back(candidates[pick]);
        candidates.erase(candidates.begin() + static_cast<std::ptrdiff_t>(pick));
        weights.erase(weights.begin() + static_cast<std::ptrdiff_t>(pick));
      }
      break;
    }
  }
  return batch;
}

namespace {

// Closed form of w <- max(w * xi, w_min) from w = 1; evaluating it from the
// count keeps the weight exactly max(xi^k, w_min) instead of accumulating
// one rounding per multiplication.
double fws_weight_after(std::int64_t count, const SamplerConfig& config) {
  return std::max(std::pow(config.xi, static_cast<double>(count)), config.w_min);
}

}  // namespace

void ReplayStore::record_batched(const std::vector<SampleId>& ids, const SamplerConfig& config) {
  for (SampleId id : ids) at(id);
  for (SampleId id : ids) {
    auto& s = mutable_at(id);
    s.batch_count += 1;
    s.fws_weight = fws_weight_after(s.batch_count, config);
  }
}

void ReplayStore::restore_counters(SampleId id, std::int64_t batch_count, const SamplerConfig& config) {
  if (batch_count < 0) throw ArgumentError("batch_count must be non-negative");
  auto& s = mutable_at(id);
  s.batch_count = batch_count;
  s.fws_weight = fws_weight_after(batch_count, config);
}

void save_store(const ReplayStore& store, const std::string& bin_path, const std::string& csv_path) {
  Dataset snapshot;
  snapshot.samples.reserve(store.size());
  for (const auto& s : store.samples()) snapshot.samples.push_back({s.label, Split::Train, s.payload});
  save_dataset(snapshot, bin_path);

  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw std::runtime_error("cannot open " + csv_path + " for writing");
  csv << "id,label,batch_count\n";
  for (const auto& s : store.samples()) csv << s.id << ',' << s.label.value << ',' << s.batch_count << '\n';
}

ReplayStore load_store(const std::string& bin_path, const std::string& csv_path, const SamplerConfig& config) {
  Dataset snapshot = load_dataset(bin_path);
  ReplayStore store;
  for (auto& s : snapshot.samples) store.insert(s.label, std::move(s.payload));

  std::ifstream csv(csv_path);
  if (!csv) throw std::runtime_error("cannot open " + csv_path);
  std::string line;
  std::getline(csv, line);
  if (line != "id,label,batch_count") throw FormatError("unexpected store sidecar header", 0);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string f_id, f_label, f_count;
    if (!std::getline(row, f_id, ',') || !std::getline(row, f_label, ',') || !std::getline(row, f_count))
      throw FormatError("malformed store sidecar row " + std::to_string(rows + 1), 0);
    SampleId id = 0;
    std::int32_t label = 0;
    std::int64_t count = 0;
    try {
      id = std::stoll(f_id);
      label = std::stoi(f_label);
      count = std::stoll(f_count);
    } catch (const std::logic_error&) {
      throw FormatError("non-numeric field in store sidecar row " + std::to_string(rows + 1), 0);
    }
    if (id < 0 || static_cast<std::size_t>(id) >= store.size() || count < 0)
      throw FormatError("out-of-range field in store sidecar row " + std::to_string(rows + 1), 0);
    if (store.at(id).label.value != label)
      throw FormatError("store sidecar label disagrees with snapshot for id " + f_id, 0);
    store.restore_counters(id, count, config);
    ++rows;
  }
  if (rows != store.size()) throw FormatError("store sidecar row count does not match snapshot", 0);
  return store;
}

}  // namespace acl
