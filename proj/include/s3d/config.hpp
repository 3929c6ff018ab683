#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "s3d/data.hpp"
#include "s3d/eval.hpp"
#include "s3d/infer.hpp"
#include "s3d/network.hpp"

namespace s3d {

struct TrainSettings {
  int epochs = 45;
  int batch_size = 8;
  long long stride_frames = 32;
  bool jitter = true;
  int lr_decay_epoch = 40;  // from this epoch on the rate is scaled by lr_decay_factor; 0 disables
  double lr_decay_factor = 0.1;
  int checkpoint_every = 0;  // epochs; 0 disables
  bool overfit_one_window = false;
  int overfit_steps = 200;
};

/// Every tunable of the pipeline. Loaded from one JSON file; command-line
/// flags are applied on top by the CLI.
struct RunConfig {
  std::uint64_t seed = 42;
  int threads = 0;  // 0: S3D_THREADS, then hardware concurrency
  NetworkConfig network = NetworkConfig::tiny(3);
  SyntheticSpec synthetic;
  TrainSettings train;
  InferenceSettings inference;
  long long inference_stride_frames = 0;  // 0: half the window length
  EvalConfig eval;

  /// Cross-module checks: network feature lengths against the span grid,
  /// class counts, thresholds. Throws ConfigError.
  void validate() const;

  long long inference_stride() const {
    return inference_stride_frames > 0 ? inference_stride_frames : network.input.length / 2;
  }

  nlohmann::json to_json() const;
  /// Keys missing from `j` keep their defaults.
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);

  /// Stable FNV-1a hash of the canonical JSON, as 16 hex digits.
  std::string hash() const;
};

/// Thread count from an explicit value, else S3D_THREADS, else the hardware.
int thread_count(int requested);

}  // namespace s3d
