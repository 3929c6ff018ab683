#include "s3d/spans.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "s3d/error.hpp"

namespace s3d {

void SpanGridConfig::validate() const {
  if (layer_lengths.empty()) throw ConfigError("span grid: layer_lengths is empty");
  for (std::size_t f = 0; f < layer_lengths.size(); ++f) {
    if (layer_lengths[f] <= 0) {
      throw ConfigError("span grid: layer length " + std::to_string(layer_lengths[f]) +
                        " at layer " + std::to_string(f) + " is not positive");
    }
    if (f > 0 && layer_lengths[f] >= layer_lengths[f - 1]) {
      throw ConfigError("span grid: layer_lengths must be strictly decreasing");
    }
  }
  if (ratios.empty()) throw ConfigError("span grid: ratios is empty");
  for (std::size_t r = 0; r < ratios.size(); ++r) {
    if (!(ratios[r] > 0.0 && ratios[r] <= 1.0)) {
      throw ConfigError("span grid: ratio " + std::to_string(ratios[r]) + " outside (0, 1]");
    }
    if (r > 0 && ratios[r] <= ratios[r - 1]) {
      throw ConfigError("span grid: ratios must be strictly increasing");
    }
  }
}

std::size_t SpanGridConfig::span_count() const {
  std::size_t cells = 0;
  for (int l : layer_lengths) cells += static_cast<std::size_t>(l);
  return cells * ratios.size();
}

std::size_t MatchResult::positive_count() const {
  return static_cast<std::size_t>(
      std::count_if(assignment.begin(), assignment.end(), [](const auto& a) { return a.has_value(); }));
}

DefaultSpanGrid tile_default_spans(const SpanGridConfig& config) {
  config.validate();
  DefaultSpanGrid grid;
  grid.spans.reserve(config.span_count());
  grid.origins.reserve(config.span_count());
  for (int f = 0; f < static_cast<int>(config.layer_lengths.size()); ++f) {
    const double cells = config.layer_lengths[f];
    for (int i = 0; i < config.layer_lengths[f]; ++i) {
      for (int r = 0; r < static_cast<int>(config.ratios.size()); ++r) {
        grid.spans.push_back(Span{(i + 0.5) / cells, config.ratios[r] / cells});
        grid.origins.push_back(SpanOrigin{f, i, r});
      }
    }
  }
  return grid;
}

double temporal_iou(const Span& a, const Span& b) {
  const double inter = std::min(a.end(), b.end()) - std::max(a.start(), b.start());
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.end(), b.end()) - std::min(a.start(), b.start());
  return std::clamp(inter / uni, 0.0, 1.0);
}

Offsets encode_offsets(const Span& truth, const Span& reference) {
  return Offsets{(truth.center - reference.center) / reference.length,
                 std::log(truth.length / reference.length)};
}

Span decode_offsets(const Offsets& offsets, const Span& reference) {
  return Span{reference.center + offsets.center * reference.length,
              reference.length * std::exp(offsets.length)};
}

MatchResult match_spans(const DefaultSpanGrid& grid, std::span<const GroundTruth> truths,
                        int num_classes, double threshold) {
  for (std::size_t j = 0; j < truths.size(); ++j) {
    const auto& t = truths[j];
    if (t.label < 1 || (num_classes > 0 && t.label > num_classes)) {
      throw InputError("ground truth " + std::to_string(j) + ": class " + std::to_string(t.label) +
                       " outside [1, " + std::to_string(num_classes) + "]");
    }
    if (!(t.span.length > 0.0)) {
      throw InputError("ground truth " + std::to_string(j) + ": non-positive length");
    }
  }

  const std::size_t n = grid.size();
  MatchResult result;
  result.assignment.assign(n, std::nullopt);
  result.soft_label.assign(n, 0.0);
  result.target_offsets.assign(n, Offsets{});

  for (std::size_t i = 0; i < n; ++i) {
    double best = 0.0;
    int best_j = -1;
    for (std::size_t j = 0; j < truths.size(); ++j) {
      const double iou = temporal_iou(grid.spans[i], truths[j].span);
      if (iou > best) {
        best = iou;
        best_j = static_cast<int>(j);
      }
    }
    result.soft_label[i] = best;
    if (best_j >= 0 && best > threshold) {
      result.assignment[i] = Assignment{best_j, truths[best_j].label};
      result.target_offsets[i] = encode_offsets(truths[best_j].span, grid.spans[i]);
    }
  }
  return result;
}

}  // namespace s3d
