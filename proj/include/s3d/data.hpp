#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3d/eval.hpp"
#include "s3d/infer.hpp"
#include "s3d/tensor.hpp"

namespace s3d {

/// Parameters of the synthetic untrimmed-video generator. Every class renders
/// a bright square of side H/4 that moves in its own direction and blinks,
/// toggling visibility every k frames for class k, over uniform noise.
struct SyntheticSpec {
  int num_classes = 3;
  double min_duration_sec = 60.0;
  double max_duration_sec = 180.0;
  double fps = 8.0;
  int height = 16;
  int width = 16;
  double min_instance_sec = 2.0;
  double max_instance_sec = 6.0;
  int min_instances = 1;
  int max_instances = 8;
  double noise_amplitude = 0.5;
  double square_intensity = 1.0;
  double speed_px_per_frame = 0.5;
  int window_frames = 64;
  int train_videos = 40;
  int test_videos = 10;
  std::uint64_t seed = 42;

  /// Throws GenerationError naming the violated constraint.
  void validate() const;
  std::vector<std::string> class_names() const;

  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);
};

struct Video {
  std::string id;
  std::string split;  // "train" or "test"
  TensorD frames;     // [T, H, W, 3]
  VideoAnnotation annotation;

  double duration_sec() const { return static_cast<double>(frames.dim(0)) / annotation.fps; }
};

/// Deterministic per-video RNG derived from (seed, index).
std::mt19937_64 video_rng(std::uint64_t seed, std::uint64_t index);

Video generate_video(const SyntheticSpec& spec, int index);
std::vector<Video> generate_synthetic_dataset(const SyntheticSpec& spec);

/// Draws one frame of class `label` into `frames` at frame `t`, `age` frames
/// after the instance started.
void render_instance_frame(TensorD& frames, long long t, long long age, int label, double origin_y,
                           double origin_x, const SyntheticSpec& spec);

// Video tensor file: "S3DV" | u8 version 1 | u32 rank | u64 dims[rank] | fp64 data, little-endian.
void save_video_tensor(const TensorD& frames, const std::filesystem::path& path);
TensorD load_video_tensor(const std::filesystem::path& path);

struct ManifestEntry {
  std::string video_id;
  std::string split;
  std::string video_path;       // relative to the dataset root
  std::string annotation_path;  // relative to the dataset root
  double duration_sec = 0.0;
  long long num_frames = 0;
};

struct DatasetManifest {
  SyntheticSpec spec;
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> videos;

  nlohmann::json to_json() const;
  static DatasetManifest from_json(const nlohmann::json& j);
  static DatasetManifest load(const std::filesystem::path& root);
  std::vector<ManifestEntry> split(const std::string& name) const;
};

/// Writes videos/, annotations/ and manifest.json under `root`.
DatasetManifest write_dataset(const std::filesystem::path& root, const SyntheticSpec& spec,
                              const std::vector<Video>& videos);
Video load_video(const std::filesystem::path& root, const ManifestEntry& entry,
                 std::vector<std::string>& class_names);

struct TrainingWindow {
  TensorD frames;  // [L, H, W, 3]
  long long start_frame = 0;
  WindowPlacement placement;
  std::vector<GroundTruth> annotations;  // window-normalized
};

inline constexpr double kRetentionFraction = 0.5;

/// Annotations of a window: each instance is clipped to the window and kept
/// when at least `retention` of its length survives.
std::vector<GroundTruth> window_annotations(const std::vector<LabeledInterval>& annotations,
                                            const WindowPlacement& placement,
                                            double retention = kRetentionFraction);

/// One window starting at `start_frame`, with its retained annotations.
TrainingWindow make_window(const TensorD& video, const std::vector<LabeledInterval>& annotations,
                           long long start_frame, long long window_frames, double fps, double pad_noise = 0.0);

std::vector<TrainingWindow> make_windows(const TensorD& video, const std::vector<LabeledInterval>& annotations,
                                         long long window_frames, long long stride_frames, double fps,
                                         double pad_noise = 0.0);

struct JitterSettings {
  int max_shift_frames = 0;       // temporal shift drawn from [-max, +max]
  int crop_margin = 0;            // crop (H - m) x (W - m), resized back
  double flip_probability = 0.0;  // horizontal flip

  /// Defaults: shift up to stride/4 frames, 2-pixel crop margin, flip with p = 0.5.
  static JitterSettings standard(long long stride_frames) {
    return {static_cast<int>(stride_frames / 4), 2, 0.5};
  }
};

/// Temporal shift (annotations re-derived from the source video) followed by
/// a random crop resized back with nearest-neighbour and an optional flip.
TrainingWindow jitter(const TrainingWindow& window, const TensorD& video,
                      const std::vector<LabeledInterval>& annotations, const JitterSettings& settings,
                      std::mt19937_64& rng, double pad_noise = 0.0);

/// Spatial part of jitter only.
TensorD spatial_jitter(const TensorD& frames, int crop_y, int crop_x, int crop_margin, bool flip);

}  // namespace s3d
