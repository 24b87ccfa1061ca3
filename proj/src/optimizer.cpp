#include "acl/optimizer.hpp"

#include <cmath>

namespace acl {

OptimizerState OptimizerState::for_params(const DecoderParams& params, AdamWConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = params.zeros_like();
  s.second_moment = params.zeros_like();
  return s;
}

void optimizer_step(DecoderParams& params, const DecoderParams& grads, OptimizerState& state) {
  auto p = params.tensors();
  const auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
    throw ArgumentError("optimizer_step: parameter layout mismatch");
  for (std::size_t i = 0; i < p.size(); ++i)
    if (g[i].rows != p[i].rows || g[i].cols != p[i].cols || m[i].rows != p[i].rows || m[i].cols != p[i].cols ||
        v[i].rows != p[i].rows || v[i].cols != p[i].cols)
      throw ArgumentError("optimizer_step: shape mismatch for " + std::string(p[i].name));

  const auto& c = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double wd = p[i].weight_decay ? c.weight_decay : 0.0;
    for (Eigen::Index j = 0; j < p[i].size(); ++j) {
      const double gj = g[i].data[j];
      double& mj = m[i].data[j];
      double& vj = v[i].data[j];
      mj = c.beta1 * mj + (1.0 - c.beta1) * gj;
      vj = c.beta2 * vj + (1.0 - c.beta2) * gj * gj;
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      double& theta = p[i].data[j];
      theta -= c.lr * (m_hat / (std::sqrt(v_hat) + c.eps) + wd * theta);
    }
  }
}

}  // namespace acl
