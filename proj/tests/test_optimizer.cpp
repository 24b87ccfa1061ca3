#include <doctest.h>

#include "acl/optimizer.hpp"

using namespace acl;

namespace {

// 1x1 linear decoder: the weight is the single trainable scalar of interest.
DecoderParams scalar_params(double w) {
  auto p = make_decoder(DecoderVariant::Linear, 1, 1, 0);
  p.linear.weight(0, 0) = w;
  return p;
}

}  // namespace

TEST_CASE("zero gradient without decay leaves parameters unchanged") {
  auto p = make_decoder(DecoderVariant::TransformerBlock, 4, 4, 1);
  p.other_logit = 0.3;
  const auto before = p.flatten();
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  auto state = OptimizerState::for_params(p, cfg);
  for (int i = 0; i < 3; ++i) optimizer_step(p, p.zeros_like(), state);
  CHECK(p.flatten() == before);
  CHECK(state.step == 3);
}

TEST_CASE("first step with unit gradient") {
  auto p = scalar_params(2.0);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  auto state = OptimizerState::for_params(p, cfg);
  auto g = p.zeros_like();
  g.linear.weight(0, 0) = 1.0;
  optimizer_step(p, g, state);
  CHECK(p.linear.weight(0, 0) == doctest::Approx(2.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(p.linear.bias[0] == 0.0);
}

TEST_CASE("decoupled weight decay skips the other logit") {
  auto p = scalar_params(2.0);
  p.other_logit = 1.0;
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.05;
  auto state = OptimizerState::for_params(p, cfg);
  optimizer_step(p, p.zeros_like(), state);
  CHECK(p.linear.weight(0, 0) == doctest::Approx(2.0 * (1.0 - 0.1 * 0.05)).epsilon(1e-14));
  CHECK(p.other_logit == 1.0);
}

TEST_CASE("defaults follow the online learning-rate scaling") {
  const AdamWConfig cfg;
  CHECK(cfg.lr == doctest::Approx(32.0 * kOfflineLearningRate / 2048.0).epsilon(1e-15));
  CHECK(cfg.weight_decay == 0.05);
  CHECK(cfg.beta1 == 0.9);
  CHECK(cfg.beta2 == 0.999);
  CHECK(cfg.eps == 1e-8);
}

TEST_CASE("one-dimensional quadratic decreases monotonically after warm-up") {
  auto p = scalar_params(0.0);
  AdamWConfig cfg;
  cfg.lr = 0.1;
  cfg.weight_decay = 0.0;
  auto state = OptimizerState::for_params(p, cfg);
  // minimum far enough away that Adam's ~lr-sized steps never overshoot in 100 steps
  constexpr double target = 20.0;
  auto loss = [](double w) { return (w - target) * (w - target); };
  std::vector<double> history;
  for (int i = 0; i < 100; ++i) {
    auto g = p.zeros_like();
    g.linear.weight(0, 0) = 2.0 * (p.linear.weight(0, 0) - target);
    optimizer_step(p, g, state);
    history.push_back(loss(p.linear.weight(0, 0)));
  }
  for (std::size_t i = 5; i < history.size(); ++i) CHECK(history[i] < history[i - 1]);
  CHECK(history.back() < 0.5 * loss(0.0));
}

TEST_CASE("shape mismatch is rejected") {
  auto p = scalar_params(1.0);
  auto state = OptimizerState::for_params(p);
  const auto other = make_decoder(DecoderVariant::Linear, 2, 2, 0);
  CHECK_THROWS_AS(optimizer_step(p, other, state), ArgumentError);
  const auto block = make_decoder(DecoderVariant::TransformerBlock, 1, 1, 0);
  CHECK_THROWS_AS(optimizer_step(p, block, state), ArgumentError);
}
