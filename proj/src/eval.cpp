#include "s3d/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "s3d/error.hpp"

namespace s3d {

using nlohmann::json;

void EvalConfig::validate() const {
  if (iou_thresholds.empty()) throw ConfigError("eval: no IoU thresholds");
  for (std::size_t i = 0; i < iou_thresholds.size(); ++i) {
    const double t = iou_thresholds[i];
    if (!(t > 0.0 && t <= 1.0)) throw ConfigError("eval: IoU threshold " + std::to_string(t) + " outside (0, 1]");
    if (i > 0 && t <= iou_thresholds[i - 1]) throw ConfigError("eval: IoU thresholds must be strictly increasing");
  }
}

json annotation_to_json(const VideoAnnotation& video, const std::vector<std::string>& class_names) {
  json list = json::array();
  for (const auto& a : video.annotations) {
    if (a.label < 1 || a.label > static_cast<int>(class_names.size())) {
      throw InputError("annotation label " + std::to_string(a.label) + " has no class name");
    }
    list.push_back({{"label", class_names[a.label - 1]}, {"start_sec", a.start_sec}, {"end_sec", a.end_sec}});
  }
  return {{"video_id", video.video_id}, {"fps", video.fps}, {"num_frames", video.num_frames}, {"annotations", list}};
}

std::vector<VideoAnnotation> annotations_from_json(const json& j, std::vector<std::string>& class_names,
                                                   bool extend_vocabulary) {
  std::vector<VideoAnnotation> out;
  auto one = [&](const json& obj) {
    VideoAnnotation v;
    try {
      v.video_id = obj.at("video_id").get<std::string>();
      v.fps = obj.at("fps").get<double>();
      v.num_frames = obj.at("num_frames").get<long long>();
      for (const auto& a : obj.at("annotations")) {
        const auto label = a.at("label").get<std::string>();
        auto it = std::find(class_names.begin(), class_names.end(), label);
        if (it == class_names.end()) {
          if (!extend_vocabulary) {
            throw InputError("unknown class label '" + label + "' in annotations for video " + v.video_id);
          }
          class_names.push_back(label);
          it = class_names.end() - 1;
        }
        LabeledInterval li{static_cast<int>(it - class_names.begin()) + 1, a.at("start_sec").get<double>(),
                           a.at("end_sec").get<double>()};
        if (!(li.end_sec > li.start_sec)) {
          throw InputError("annotation in video " + v.video_id + " has end_sec <= start_sec");
        }
        v.annotations.push_back(li);
      }
    } catch (const json::exception& e) {
      throw InputError(std::string("malformed annotation file: ") + e.what());
    }
    out.push_back(std::move(v));
  };
  if (j.is_array()) {
    for (const auto& obj : j) one(obj);
  } else {
    one(j);
  }
  return out;
}

double interval_iou(double a_start, double a_end, double b_start, double b_end) {
  const double inter = std::min(a_end, b_end) - std::max(a_start, b_start);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a_end, b_end) - std::min(a_start, b_start);
  return uni > 0.0 ? inter / uni : 0.0;
}

PRCurve average_precision(std::vector<ScoredInterval> detections, const std::vector<TruthInterval>& truths,
                          double iou_threshold) {
  PRCurve curve;
  if (detections.empty() && truths.empty()) {
    curve.defined = false;
    return curve;
  }
  std::stable_sort(detections.begin(), detections.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<bool> used(truths.size(), false);
  const double total = static_cast<double>(truths.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < detections.size(); ++i) {
    const auto& d = detections[i];
    double best = -1.0;
    std::size_t best_j = truths.size();
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (used[j] || truths[j].video_id != d.video_id) continue;
      const double iou = interval_iou(d.start_sec, d.end_sec, truths[j].start_sec, truths[j].end_sec);
      if (iou > best) {
        best = iou;
        best_j = j;
      }
    }
    const bool hit = best_j < truths.size() && best >= iou_threshold;
    if (hit) {
      used[best_j] = true;
      ++tp;
    }
    curve.true_positive.push_back(hit);
    curve.recall.push_back(total > 0.0 ? static_cast<double>(tp) / total : 0.0);
    curve.precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  if (truths.empty()) return curve;  // AP 0

  std::vector<double> envelope = curve.precision;
  for (std::size_t i = envelope.size(); i-- > 1;) envelope[i - 1] = std::max(envelope[i - 1], envelope[i]);
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < envelope.size(); ++i) {
    if (!curve.true_positive[i]) continue;
    curve.ap += (curve.recall[i] - prev_recall) * envelope[i];
    prev_recall = curve.recall[i];
  }
  return curve;
}

EvalResult mean_ap(const std::vector<VideoDetections>& detections, const std::vector<VideoAnnotation>& truths,
                   int num_classes, const EvalConfig& config) {
  config.validate();
  if (num_classes < 1) throw ConfigError("eval: num_classes must be >= 1");
  std::vector<std::vector<ScoredInterval>> dets(num_classes);
  std::vector<std::vector<TruthInterval>> gts(num_classes);
  for (const auto& v : detections) {
    for (const auto& d : v.detections) {
      if (d.label < 1 || d.label > num_classes) {
        throw InputError("detection label " + std::to_string(d.label) + " in video " + v.video_id +
                         " is not a known class");
      }
      dets[d.label - 1].push_back({v.video_id, d.start_sec, d.end_sec, d.score});
    }
  }
  for (const auto& v : truths) {
    for (const auto& a : v.annotations) {
      if (a.label < 1 || a.label > num_classes) {
        throw InputError("annotation label " + std::to_string(a.label) + " in video " + v.video_id +
                         " is not a known class");
      }
      gts[a.label - 1].push_back({v.video_id, a.start_sec, a.end_sec});
    }
  }

  EvalResult result;
  result.thresholds = config.iou_thresholds;
  for (int k = 0; k < num_classes; ++k) {
    if (!gts[k].empty()) result.evaluated_classes.push_back(k + 1);
  }
  for (double t : config.iou_thresholds) {
    std::vector<double> aps(num_classes, std::numeric_limits<double>::quiet_NaN());
    double sum = 0.0;
    for (int k : result.evaluated_classes) {
      aps[k - 1] = average_precision(dets[k - 1], gts[k - 1], t).ap;
      sum += aps[k - 1];
    }
    result.class_ap.push_back(aps);
    result.mean_ap.push_back(result.evaluated_classes.empty()
                                 ? 0.0
                                 : sum / static_cast<double>(result.evaluated_classes.size()));
  }
  return result;
}

}  // namespace s3d
