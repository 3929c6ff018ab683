#include "s3d/infer.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "s3d/error.hpp"
#include "s3d/parallel.hpp"

namespace s3d {

void WindowPlacement::validate() const {
  if (!(window_duration_sec > 0.0)) throw InputError("window duration must be positive");
  if (!(fps > 0.0)) throw InputError("fps must be positive");
}

std::vector<std::size_t> temporal_nms_indices(const std::vector<ScoredSpan>& candidates, double threshold) {
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return candidates[a].score > candidates[b].score; });
  std::vector<std::size_t> kept;
  std::vector<bool> removed(candidates.size(), false);
  for (std::size_t oi = 0; oi < order.size(); ++oi) {
    const std::size_t i = order[oi];
    if (removed[i]) continue;
    kept.push_back(i);
    for (std::size_t oj = oi + 1; oj < order.size(); ++oj) {
      const std::size_t j = order[oj];
      if (!removed[j] && temporal_iou(candidates[i].span, candidates[j].span) > threshold) removed[j] = true;
    }
  }
  return kept;
}

std::vector<ScoredSpan> temporal_nms(const std::vector<ScoredSpan>& candidates, double threshold) {
  std::vector<ScoredSpan> out;
  for (std::size_t i : temporal_nms_indices(candidates, threshold)) out.push_back(candidates[i]);
  return out;
}

std::vector<WindowDetection> detect_window(const std::vector<PredictionVector>& predictions,
                                           const DefaultSpanGrid& grid, double score_threshold,
                                           double nms_threshold) {
  if (predictions.size() != grid.size()) {
    throw InputError("detect_window: " + std::to_string(predictions.size()) + " predictions for " +
                     std::to_string(grid.size()) + " default spans");
  }
  std::vector<ScoredSpan> candidates;
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].act_score < score_threshold) continue;
    candidates.push_back({decode_offsets(predictions[i].offsets, grid.spans[i]), predictions[i].act_score});
    source.push_back(i);
  }

  std::vector<WindowDetection> out;
  for (std::size_t c : temporal_nms_indices(candidates, nms_threshold)) {
    const auto& logits = predictions[source[c]].class_scores;
    Index best = 0;
    logits.maxCoeff(&best);
    const double prob = 1.0 / (logits.array() - logits(best)).exp().sum();
    out.push_back({candidates[c].span, static_cast<int>(best) + 1, candidates[c].score * prob});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  return out;
}

Detection to_absolute(const WindowDetection& d, const WindowPlacement& placement) {
  const double lo = placement.window_start_sec;
  const double hi = placement.window_start_sec + placement.window_duration_sec;
  return Detection{std::clamp(placement.to_seconds(d.span.start()), lo, hi),
                   std::clamp(placement.to_seconds(d.span.end()), lo, hi), d.label, d.score};
}

std::vector<Detection> merge_windows(const std::vector<std::vector<Detection>>& per_window, double nms_threshold) {
  std::vector<Detection> all;
  for (const auto& w : per_window) all.insert(all.end(), w.begin(), w.end());

  std::map<int, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < all.size(); ++i) by_label[all[i].label].push_back(i);

  std::vector<std::size_t> kept;
  for (const auto& [label, members] : by_label) {
    std::vector<ScoredSpan> candidates;
    for (std::size_t i : members) {
      candidates.push_back({Span::from_interval(all[i].start_sec, all[i].end_sec), all[i].score});
    }
    for (std::size_t c : temporal_nms_indices(candidates, nms_threshold)) kept.push_back(members[c]);
  }
  std::sort(kept.begin(), kept.end());
  std::stable_sort(kept.begin(), kept.end(), [&](std::size_t a, std::size_t b) { return all[a].score > all[b].score; });
  std::vector<Detection> out;
  out.reserve(kept.size());
  for (std::size_t i : kept) out.push_back(all[i]);
  return out;
}

TensorD extract_frames(const TensorD& video, long long offset, long long length, double pad_noise) {
  const Volume v = volume_of(video);
  TensorD out({length, v.height, v.width, v.channels});
  const Index frame = v.height * v.width * v.channels;
  const long long available = std::clamp<long long>(v.length - offset, 0, length);
  if (available > 0) {
    std::copy(video.data() + offset * frame, video.data() + (offset + available) * frame, out.data());
  }
  if (available < length && pad_noise > 0.0) {
    std::mt19937_64 rng(0x9E3779B97F4A7C15ull ^ static_cast<std::uint64_t>(offset));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (Index i = available * frame; i < out.size(); ++i) out.data()[i] = pad_noise * u(rng);
  }
  return out;
}

std::vector<long long> window_offsets(long long num_frames, long long window, long long stride) {
  if (window <= 0 || stride <= 0) throw ConfigError("window length and stride must be positive");
  std::vector<long long> out{0};
  while (out.back() + window < num_frames) out.push_back(out.back() + stride);
  return out;
}

std::vector<Detection> detect_video(const Network& net, const TensorD& video, double fps,
                                    const InferenceSettings& settings, long long stride_frames, int threads) {
  const Volume in = net.config().input;
  const Volume v = volume_of(video);
  if (v.height != in.height || v.width != in.width || v.channels != in.channels) {
    throw InputError("video frames " + v.str() + " do not match network input " + in.str());
  }
  const auto offsets = window_offsets(v.length, in.length, stride_frames);
  const double video_end = static_cast<double>(v.length) / fps;
  std::vector<std::vector<Detection>> per_window(offsets.size());
  parallel_for(offsets.size(), threads, [&](std::size_t w) {
    const TensorD window = extract_frames(video, offsets[w], in.length, settings.pad_noise);
    const WindowPlacement placement{static_cast<double>(offsets[w]) / fps, static_cast<double>(in.length) / fps, fps};
    for (const auto& d : detect_window(net.predict(window), net.grid(), settings.score_threshold,
                                       settings.nms_threshold)) {
      Detection abs = to_absolute(d, placement);
      abs.end_sec = std::min(abs.end_sec, video_end);
      if (abs.end_sec > abs.start_sec) per_window[w].push_back(abs);
    }
  });
  return merge_windows(per_window, settings.nms_threshold);
}

nlohmann::json detections_to_json(const std::string& video_id, std::vector<Detection> detections,
                                  const std::vector<std::string>& class_names) {
  std::stable_sort(detections.begin(), detections.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  nlohmann::json list = nlohmann::json::array();
  for (const auto& d : detections) {
    if (d.label < 1 || d.label > static_cast<int>(class_names.size())) {
      throw InputError("detection label " + std::to_string(d.label) + " has no class name");
    }
    list.push_back({{"label", class_names[d.label - 1]},
                    {"start_sec", d.start_sec},
                    {"end_sec", d.end_sec},
                    {"score", d.score}});
  }
  return {{"video_id", video_id}, {"detections", list}};
}

std::vector<VideoDetections> detections_from_json(const nlohmann::json& j,
                                                  const std::vector<std::string>& class_names) {
  std::vector<VideoDetections> out;
  auto one = [&](const nlohmann::json& obj) {
    VideoDetections v;
    try {
      v.video_id = obj.at("video_id").get<std::string>();
      for (const auto& d : obj.at("detections")) {
        const auto label = d.at("label").get<std::string>();
        const auto it = std::find(class_names.begin(), class_names.end(), label);
        if (it == class_names.end()) {
          throw InputError("unknown class label '" + label + "' in detections for video " + v.video_id);
        }
        v.detections.push_back({d.at("start_sec").get<double>(), d.at("end_sec").get<double>(),
                                static_cast<int>(it - class_names.begin()) + 1, d.at("score").get<double>()});
      }
    } catch (const nlohmann::json::exception& e) {
      throw InputError(std::string("malformed detection file: ") + e.what());
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

}  // namespace s3d
