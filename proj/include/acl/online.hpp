#pragma once

#include <vector>

#include "acl/decoder.hpp"
#include "acl/optimizer.hpp"
#include "acl/replay_store.hpp"

namespace acl {

struct OnlineUpdateConfig {
  SamplerConfig sampler;
  double beta = 0.1;
};

struct OnlineUpdateResult {
  std::vector<SampleId> batch;
  double loss = 0.0;
};

// One optimizer iteration on a replay batch that contains `new_id`. The loss
// candidate set is the store's seen labels. Batch members' FWS counters are
// advanced afterwards.
OnlineUpdateResult online_update(SampleId new_id, ReplayStore& store, DecoderParams& params, OptimizerState& state,
                                 const OnlineUpdateConfig& config, const LabelEmbeddingTable& table, Rng& rng);

}  // namespace acl
