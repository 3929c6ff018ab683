#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "s3d/network.hpp"
#include "s3d/spans.hpp"

namespace s3d {

struct Detection {
  double start_sec = 0.0;
  double end_sec = 0.0;
  int label = 1;
  double score = 0.0;
};

struct WindowPlacement {
  double window_start_sec = 0.0;
  double window_duration_sec = 1.0;
  double fps = 1.0;

  void validate() const;
  double to_seconds(double normalized) const { return window_start_sec + normalized * window_duration_sec; }
  double to_normalized(double seconds) const { return (seconds - window_start_sec) / window_duration_sec; }
};

struct WindowDetection {
  Span span;
  int label = 1;
  double score = 0.0;
};

struct ScoredSpan {
  Span span;
  double score = 0.0;
};

struct InferenceSettings {
  double score_threshold = 0.05;
  double nms_threshold = 0.5;
  double pad_noise = 0.0;  // amplitude of the noise that fills windows past the video end
};

/// Frames [offset, offset + length) of a [T, H, W, C] video. Frames past the
/// end are uniform noise in [0, pad_noise) seeded from the offset.
TensorD extract_frames(const TensorD& video, long long offset, long long length, double pad_noise);

/// Greedy suppression: keep the best remaining candidate, drop everything
/// with IoU strictly above the threshold against it. Equal scores keep input order.
std::vector<ScoredSpan> temporal_nms(const std::vector<ScoredSpan>& candidates, double threshold);
/// Indices of the survivors, in output order.
std::vector<std::size_t> temporal_nms_indices(const std::vector<ScoredSpan>& candidates, double threshold);

/// Threshold on activity score, decode offsets, class-agnostic NMS, then label
/// each survivor with its best class. Score = act * softmax(class)_label.
std::vector<WindowDetection> detect_window(const std::vector<PredictionVector>& predictions,
                                           const DefaultSpanGrid& grid, double score_threshold,
                                           double nms_threshold);

/// Window-normalized span to absolute seconds, clipped to the window. The
/// result may be empty (end <= start) and must then be dropped.
Detection to_absolute(const WindowDetection& detection, const WindowPlacement& placement);

/// Concatenate per-window detections and run per-class NMS in absolute time.
std::vector<Detection> merge_windows(const std::vector<std::vector<Detection>>& per_window, double nms_threshold);

/// Start of each inference window, in frames; the last window may run past the end.
std::vector<long long> window_offsets(long long num_frames, long long window, long long stride);

/// Sliding-window detection over a full video tensor [T, H, W, C].
std::vector<Detection> detect_video(const Network& net, const TensorD& video, double fps,
                                    const InferenceSettings& settings, long long stride_frames, int threads = 1);

/// {"video_id": ..., "detections": [{"label", "start_sec", "end_sec", "score"}]}, sorted by score.
nlohmann::json detections_to_json(const std::string& video_id, std::vector<Detection> detections,
                                  const std::vector<std::string>& class_names);

struct VideoDetections {
  std::string video_id;
  std::vector<Detection> detections;
};

/// Accepts a single object or an array of them. Labels are resolved against
/// class_names; unknown labels throw InputError naming the label.
std::vector<VideoDetections> detections_from_json(const nlohmann::json& j,
                                                  const std::vector<std::string>& class_names);

}  // namespace s3d
