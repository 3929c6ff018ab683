#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3d/infer.hpp"

namespace s3d {

struct EvalConfig {
  std::vector<double> iou_thresholds{0.3, 0.4, 0.5, 0.6, 0.7};

  void validate() const;
};

struct LabeledInterval {
  int label = 1;
  double start_sec = 0.0;
  double end_sec = 0.0;
};

/// Ground truth for one video, as stored in the annotation JSON files.
struct VideoAnnotation {
  std::string video_id;
  double fps = 8.0;
  long long num_frames = 0;
  std::vector<LabeledInterval> annotations;
};

nlohmann::json annotation_to_json(const VideoAnnotation& video, const std::vector<std::string>& class_names);

/// Parses one annotation object or an array of them. Labels missing from
/// `class_names` are appended when `extend_vocabulary` is set, else rejected.
std::vector<VideoAnnotation> annotations_from_json(const nlohmann::json& j, std::vector<std::string>& class_names,
                                                   bool extend_vocabulary);

struct ScoredInterval {
  std::string video_id;
  double start_sec = 0.0;
  double end_sec = 0.0;
  double score = 0.0;
};

struct TruthInterval {
  std::string video_id;
  double start_sec = 0.0;
  double end_sec = 0.0;
};

struct PRCurve {
  std::vector<double> recall;
  std::vector<double> precision;
  std::vector<bool> true_positive;  // per detection in score order
  double ap = 0.0;
  bool defined = true;  // false when there are neither detections nor ground truths
};

double interval_iou(double a_start, double a_end, double b_start, double b_end);

/// Greedy score-ordered matching (IoU >= threshold against the best unmatched
/// ground truth in the same video) and all-point interpolated AP.
PRCurve average_precision(std::vector<ScoredInterval> detections, const std::vector<TruthInterval>& truths,
                          double iou_threshold);

struct EvalResult {
  std::vector<double> thresholds;
  std::vector<double> mean_ap;                 // per threshold
  std::vector<std::vector<double>> class_ap;   // [threshold][class - 1], NaN when excluded
  std::vector<int> evaluated_classes;          // classes with at least one ground truth
};

/// Unweighted mean of per-class AP over classes that have ground truth.
EvalResult mean_ap(const std::vector<VideoDetections>& detections, const std::vector<VideoAnnotation>& truths,
                   int num_classes, const EvalConfig& config);

}  // namespace s3d
