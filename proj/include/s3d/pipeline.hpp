#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "s3d/config.hpp"
#include "s3d/data.hpp"
#include "s3d/eval.hpp"
#include "s3d/train.hpp"

namespace s3d {

struct TrainLogRow {
  long long step = 0;
  int epoch = 0;
  LossReport loss;
};

struct TrainOptions {
  std::filesystem::path data_dir;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path resume_from;     // checkpoint directory to continue from
  int threads = 1;
  std::function<void(const TrainLogRow&)> on_step;
};

struct TrainOutcome {
  Network net;
  OptimizerState optimizer;
  std::vector<TrainLogRow> log;
  int epochs_completed = 0;
};

/// Loads the training split, then either runs the configured epochs (windows
/// shuffled per epoch from (seed, epoch), optional jitter) or, in overfit
/// mode, repeats one window with at least one positive span.
TrainOutcome train_model(const RunConfig& config, const TrainOptions& options);

/// Checkpoint directory: model.s3d, velocity.s3d, state.json.
void save_checkpoint(const std::filesystem::path& dir, const Network& net, const OptimizerState& state,
                     int epochs_completed, const RunConfig& config);

void write_loss_csv(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

/// Sliding-window detection for every video of a split ("train", "test" or "all").
std::vector<VideoDetections> detect_dataset(const Network& net, const std::filesystem::path& data_dir,
                                            const std::string& split, const InferenceSettings& settings,
                                            long long stride_frames, int threads);

/// Ground truth for a split, labels resolved against the manifest's classes.
std::vector<VideoAnnotation> load_split_annotations(const std::filesystem::path& data_dir, const std::string& split,
                                                    std::vector<std::string>& class_names);

}  // namespace s3d
