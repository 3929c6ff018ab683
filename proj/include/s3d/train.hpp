#pragma once

#include <span>
#include <vector>

#include "s3d/network.hpp"

namespace s3d {

struct TrainExample {
  TensorD video;
  MatchResult match;
};

/// SGD with heavy-ball momentum: v <- mu v + g, theta <- theta - lr v.
struct OptimizerState {
  NetworkParams velocity;
  long long steps = 0;

  static OptimizerState zeros_like(const NetworkConfig& config) {
    return {NetworkParams::zeros_like(config), 0};
  }
};

void sgd_momentum_update(NetworkParams& params, const NetworkParams& grads, OptimizerState& state,
                         const OptimizerSettings& settings);

struct BatchEvaluation {
  LossReport loss;
  BatchTargets targets;
  NetworkParams gradients;
};

/// Forward, mining and backward over a batch without touching parameters.
/// Per-example work runs on up to `threads` workers; gradients are reduced in
/// example order so the result does not depend on the thread count.
BatchEvaluation evaluate_batch(const Network& net, std::span<const TrainExample> batch, int threads = 1);

/// One optimizer update on the joint loss. Returns the loss before the update.
/// Throws NumericError naming the first non-finite tensor.
LossReport train_step(Network& net, std::span<const TrainExample> batch, OptimizerState& state, int threads = 1);
/// Same, with settings overriding the network's own (e.g. a decayed rate).
LossReport train_step(Network& net, std::span<const TrainExample> batch, OptimizerState& state,
                      const OptimizerSettings& settings, int threads = 1);

}  // namespace s3d
