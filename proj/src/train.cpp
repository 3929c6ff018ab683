#include "s3d/train.hpp"

#include <cmath>

#include "s3d/error.hpp"
#include "s3d/parallel.hpp"

namespace s3d {

void sgd_momentum_update(NetworkParams& params, const NetworkParams& grads, OptimizerState& state,
                         const OptimizerSettings& settings) {
  std::vector<Eigen::Ref<Vector>> theta, velocity;
  std::vector<Eigen::Ref<const Vector>> g;
  params.for_each_array([&](const std::string&, Eigen::Ref<Vector> a) { theta.push_back(a); });
  state.velocity.for_each_array([&](const std::string&, Eigen::Ref<Vector> a) { velocity.push_back(a); });
  grads.for_each_array([&](const std::string&, Eigen::Ref<const Vector> a) { g.push_back(a); });
  if (theta.size() != velocity.size() || theta.size() != g.size()) {
    throw ConfigError("optimizer: parameter, velocity and gradient layouts differ");
  }
  for (std::size_t i = 0; i < theta.size(); ++i) {
    velocity[i] = settings.momentum * velocity[i] + g[i];
    theta[i] -= settings.learning_rate * velocity[i];
  }
  ++state.steps;
}

namespace {

void check_finite(const NetworkParams& p, const char* what) {
  p.for_each_array([&](const std::string& name, Eigen::Ref<const Vector> a) {
    if (!a.allFinite()) throw NumericError(std::string("non-finite ") + what + " in " + name);
  });
}

void check_finite(const ForwardCache& cache, const NetworkConfig& config, std::size_t example) {
  for (std::size_t i = 1; i < cache.activations.size(); ++i) {
    if (!cache.activations[i].all_finite()) {
      throw NumericError("non-finite activation at layer " + std::to_string(i - 1) + " (" +
                         layer_kind_name(config.layers[i - 1].kind) + ") of example " + std::to_string(example));
    }
  }
  if (!cache.predictions.allFinite()) {
    throw NumericError("non-finite predictions for example " + std::to_string(example));
  }
}

}  // namespace

BatchEvaluation evaluate_batch(const Network& net, std::span<const TrainExample> batch, int threads) {
  if (batch.empty()) throw InputError("train step: empty batch");
  const std::size_t n = batch.size();
  const Index spans = static_cast<Index>(net.grid().size());
  std::vector<ForwardCache> caches(n);
  for (std::size_t b = 0; b < n; ++b) {
    if (batch[b].match.size() != static_cast<std::size_t>(spans)) {
      throw InputError("train step: example " + std::to_string(b) + " was matched against a different span grid");
    }
  }
  parallel_for(n, threads, [&](std::size_t b) {
    net.forward(batch[b].video, &caches[b]);
    check_finite(caches[b], net.config(), b);
  });

  Matrix stacked(spans * static_cast<Index>(n), net.config().predictions_per_cell());
  std::vector<MatchResult> matches;
  matches.reserve(n);
  for (std::size_t b = 0; b < n; ++b) {
    stacked.middleRows(static_cast<Index>(b) * spans, spans) = caches[b].predictions;
    matches.push_back(batch[b].match);
  }

  BatchEvaluation eval;
  eval.targets = BatchTargets::flatten(matches);
  const int k = net.config().num_classes;
  eval.targets.mined = hard_negative_mining(stacked.col(k), eval.targets);
  Matrix grad;
  eval.loss = total_loss(stacked, k, eval.targets, net.config().loss, &grad);
  if (!std::isfinite(eval.loss.loc)) throw NumericError("non-finite localization loss");
  if (!std::isfinite(eval.loss.conf)) throw NumericError("non-finite class confidence loss");
  if (!std::isfinite(eval.loss.act)) throw NumericError("non-finite activity confidence loss");

  std::vector<NetworkParams> per_example(n);
  parallel_for(n, threads, [&](std::size_t b) {
    per_example[b] = net.backward(caches[b], grad.middleRows(static_cast<Index>(b) * spans, spans));
    caches[b] = ForwardCache{};
  });
  eval.gradients = std::move(per_example[0]);
  for (std::size_t b = 1; b < n; ++b) {
    std::vector<Eigen::Ref<Vector>> acc;
    eval.gradients.for_each_array([&](const std::string&, Eigen::Ref<Vector> a) { acc.push_back(a); });
    std::size_t i = 0;
    per_example[b].for_each_array([&](const std::string&, Eigen::Ref<const Vector> a) { acc[i++] += a; });
  }
  check_finite(eval.gradients, "gradient");
  return eval;
}

LossReport train_step(Network& net, std::span<const TrainExample> batch, OptimizerState& state, int threads) {
  return train_step(net, batch, state, net.config().optimizer, threads);
}

LossReport train_step(Network& net, std::span<const TrainExample> batch, OptimizerState& state,
                      const OptimizerSettings& settings, int threads) {
  BatchEvaluation eval = evaluate_batch(net, batch, threads);
  sgd_momentum_update(net.params(), eval.gradients, state, settings);
  check_finite(net.params(), "parameter after update");
  return eval.loss;
}

}  // namespace s3d
