#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace s3d {

/// A temporal interval in window-normalized units, stored as (center, length).
struct Span {
  double center = 0.5;
  double length = 1.0;

  double start() const { return center - 0.5 * length; }
  double end() const { return center + 0.5 * length; }

  static Span from_interval(double start, double end) {
    return Span{0.5 * (start + end), end - start};
  }
};

struct SpanGridConfig {
  std::vector<int> layer_lengths;  // temporal cells per feature layer, strictly decreasing
  std::vector<double> ratios;      // scale ratios in (0, 1], strictly increasing

  /// Throws ConfigError when the invariants above are violated.
  void validate() const;
  std::size_t span_count() const;
};

struct SpanOrigin {
  int layer = 0;
  int cell = 0;
  int ratio = 0;
};

struct DefaultSpanGrid {
  std::vector<Span> spans;
  std::vector<SpanOrigin> origins;

  std::size_t size() const { return spans.size(); }
};

struct GroundTruth {
  Span span;
  int label = 1;  // 1-based class id
};

struct Assignment {
  int truth = -1;  // index into the ground-truth list
  int label = 0;   // 1-based class id
};

struct Offsets {
  double center = 0.0;
  double length = 0.0;
};

struct MatchResult {
  std::vector<std::optional<Assignment>> assignment;
  std::vector<double> soft_label;
  /// Only meaningful where assignment is present; zero elsewhere.
  std::vector<Offsets> target_offsets;

  std::size_t size() const { return soft_label.size(); }
  std::size_t positive_count() const;
};

/// Default spans ordered by (layer, cell, ratio). A span at cell i of a layer
/// with L cells and ratio r has center (i + 0.5) / L and length r / L.
DefaultSpanGrid tile_default_spans(const SpanGridConfig& config);

/// Intersection over union of the two intervals, in [0, 1].
double temporal_iou(const Span& a, const Span& b);

Offsets encode_offsets(const Span& truth, const Span& reference);
Span decode_offsets(const Offsets& offsets, const Span& reference);

inline constexpr double kMatchThreshold = 0.5;

/// Each default span is matched to its highest-IoU ground truth when that IoU
/// is strictly above the threshold. Ties go to the lowest ground-truth index.
/// Labels must lie in [1, num_classes]; pass num_classes <= 0 to skip the
/// upper-bound check.
MatchResult match_spans(const DefaultSpanGrid& grid, std::span<const GroundTruth> truths,
                        int num_classes, double threshold = kMatchThreshold);

}  // namespace s3d
