#pragma once

#include <random>
#include <vector>

#include "oracles.hpp"
#include "s3d/network.hpp"
#include "s3d/train.hpp"

namespace s3d::fixture {

/// Two conv layers on a 4x4x4x2 input, feature layers of temporal length 4 and 2.
inline NetworkConfig micro_config() {
  NetworkConfig c;
  c.name = "micro";
  c.input = {4, 4, 4, 2};
  c.num_classes = 2;
  c.spans = {{4, 2}, {0.5, 1.0}};
  c.layers.push_back(LayerSpec::conv(2, 3, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}));
  c.layers.push_back(LayerSpec::relu());
  c.layers.back().is_feature_layer = true;
  c.layers.push_back(LayerSpec::conv(3, 4, {3, 3, 3}, {2, 2, 2}, {1, 1, 1}));
  c.layers.push_back(LayerSpec::relu());
  c.layers.back().is_feature_layer = true;
  return c;
}

/// Two windows with positives of both classes and random frames.
inline std::vector<TrainExample> micro_batch(const Network& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<TrainExample> batch;
  const std::vector<std::vector<GroundTruth>> truths{
      {{Span::from_interval(0.25, 0.5), 1}, {Span::from_interval(0.5, 1.0), 2}},
      {{Span::from_interval(0.0, 0.3), 2}}};
  for (const auto& g : truths) {
    batch.push_back({oracle::random_tensor(net.config().input.shape(), rng, 0.0, 1.0),
                     match_spans(net.grid(), g, net.config().num_classes)});
  }
  return batch;
}

}  // namespace s3d::fixture
