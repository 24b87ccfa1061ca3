#include "acl/online.hpp"

namespace acl {

OnlineUpdateResult online_update(SampleId new_id, ReplayStore& store, DecoderParams& params, OptimizerState& state,
                                 const OnlineUpdateConfig& config, const LabelEmbeddingTable& table, Rng& rng) {
  OnlineUpdateResult result;
  result.batch = store.compose_batch(new_id, config.sampler, rng);
  TrainingBatch batch;
  batch.candidates = store.seen_labels();
  batch.samples.reserve(result.batch.size());
  for (SampleId id : result.batch) {
    const auto& s = store.at(id);
    batch.samples.push_back({materialize(s.payload).as_double(), s.label});
  }
  auto lg = loss_gradients(batch, params, table, config.beta);
  optimizer_step(params, lg.grad, state);
  store.record_batched(result.batch, config.sampler);
  result.loss = lg.loss;
  return result;
}

}  // namespace acl
