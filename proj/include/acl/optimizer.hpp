#pragma once

#include <cstdint>

#include "acl/decoder.hpp"

namespace acl {

struct AdamWConfig {
  double lr = 9.375e-6;  // 32 * 6e-4 / 2048, online regime
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline constexpr double kOfflineLearningRate = 6e-4;

// Adam moments shaped like the decoder parameters.
struct OptimizerState {
  AdamWConfig config;
  std::int64_t step = 0;
  DecoderParams first_moment;
  DecoderParams second_moment;

  static OptimizerState for_params(const DecoderParams& params, AdamWConfig config = {});
};

// Decoupled weight decay Adam:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)
// The other logit is not decayed.
void optimizer_step(DecoderParams& params, const DecoderParams& grads, OptimizerState& state);

}  // namespace acl
