#pragma once
// Reference implementations used by the unit and acceptance tests. Each is
// the most literal loop form of the definition and shares no code with the
// library's fast paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "s3d/eval.hpp"
#include "s3d/infer.hpp"
#include "s3d/layers.hpp"
#include "s3d/loss.hpp"
#include "s3d/spans.hpp"

namespace s3d::oracle {

inline double max_abs_diff(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) return std::numeric_limits<double>::infinity();
  return a.size() == 0 ? 0.0 : (a.flat() - b.flat()).cwiseAbs().maxCoeff();
}

inline double max_abs_diff(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return std::numeric_limits<double>::infinity();
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

inline TensorD random_tensor(std::vector<Index> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  TensorD t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = u(rng);
  return t;
}

// ------------------------------------------------------------ conv / pool

/// Weight for tap (kt, kh, kw), input channel ci, output channel co.
inline double conv_weight(const ConvParams<double>& p, const LayerSpec& s, int kt, int kh, int kw, Index ci,
                          Index co) {
  const Index row = ((Index{kt} * s.kernel.h + kh) * s.kernel.w + kw) * s.in_channels + ci;
  return p.weights(row, co);
}

inline TensorD conv3d(const TensorD& x, const ConvParams<double>& p, const LayerSpec& s) {
  const Index L = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index OL = (L + 2 * s.padding.t - s.kernel.t) / s.stride.t + 1;
  const Index OH = (H + 2 * s.padding.h - s.kernel.h) / s.stride.h + 1;
  const Index OW = (W + 2 * s.padding.w - s.kernel.w) / s.stride.w + 1;
  TensorD y({OL, OH, OW, Index{s.out_channels}});
  for (Index ol = 0; ol < OL; ++ol)
    for (Index oh = 0; oh < OH; ++oh)
      for (Index ow = 0; ow < OW; ++ow)
        for (Index co = 0; co < s.out_channels; ++co) {
          double acc = p.bias(co);
          for (int kt = 0; kt < s.kernel.t; ++kt)
            for (int kh = 0; kh < s.kernel.h; ++kh)
              for (int kw = 0; kw < s.kernel.w; ++kw)
                for (Index ci = 0; ci < s.in_channels; ++ci) {
                  const Index il = ol * s.stride.t - s.padding.t + kt;
                  const Index ih = oh * s.stride.h - s.padding.h + kh;
                  const Index iw = ow * s.stride.w - s.padding.w + kw;
                  if (il < 0 || il >= L || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                  acc += x(il, ih, iw, ci) * conv_weight(p, s, kt, kh, kw, ci, co);
                }
          y(ol, oh, ow, co) = acc;
        }
  return y;
}

struct ConvGradients {
  TensorD input;
  Matrix weights;
  Vector bias;
};

/// Accumulates dL/dx, dL/dW, dL/db by walking the same taps as the forward sum.
inline ConvGradients conv3d_grad(const TensorD& gy, const TensorD& x, const ConvParams<double>& p,
                                 const LayerSpec& s) {
  ConvGradients g{TensorD(x.shape()), Matrix::Zero(p.weights.rows(), p.weights.cols()),
                  Vector::Zero(p.bias.size())};
  const Index L = x.dim(0), H = x.dim(1), W = x.dim(2);
  for (Index ol = 0; ol < gy.dim(0); ++ol)
    for (Index oh = 0; oh < gy.dim(1); ++oh)
      for (Index ow = 0; ow < gy.dim(2); ++ow)
        for (Index co = 0; co < s.out_channels; ++co) {
          const double go = gy(ol, oh, ow, co);
          g.bias(co) += go;
          for (int kt = 0; kt < s.kernel.t; ++kt)
            for (int kh = 0; kh < s.kernel.h; ++kh)
              for (int kw = 0; kw < s.kernel.w; ++kw)
                for (Index ci = 0; ci < s.in_channels; ++ci) {
                  const Index il = ol * s.stride.t - s.padding.t + kt;
                  const Index ih = oh * s.stride.h - s.padding.h + kh;
                  const Index iw = ow * s.stride.w - s.padding.w + kw;
                  if (il < 0 || il >= L || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                  const Index row = ((Index{kt} * s.kernel.h + kh) * s.kernel.w + kw) * s.in_channels + ci;
                  g.weights(row, co) += go * x(il, ih, iw, ci);
                  g.input(il, ih, iw, ci) += go * p.weights(row, co);
                }
        }
  return g;
}

struct PoolReference {
  TensorD output;
  TensorD grad_input;
};

/// Max pool forward plus the backward pass for `gy` (may be empty to skip).
/// Ties resolve to the first in-bounds element in (t, h, w) order.
inline PoolReference maxpool3d(const TensorD& x, const LayerSpec& s, const TensorD* gy = nullptr) {
  const Index L = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  const Index OL = (L + 2 * s.padding.t - s.kernel.t) / s.stride.t + 1;
  const Index OH = (H + 2 * s.padding.h - s.kernel.h) / s.stride.h + 1;
  const Index OW = (W + 2 * s.padding.w - s.kernel.w) / s.stride.w + 1;
  PoolReference r{TensorD({OL, OH, OW, C}), TensorD(x.shape())};
  for (Index ol = 0; ol < OL; ++ol)
    for (Index oh = 0; oh < OH; ++oh)
      for (Index ow = 0; ow < OW; ++ow)
        for (Index c = 0; c < C; ++c) {
          bool found = false;
          double best = 0.0;
          Index bl = 0, bh = 0, bw = 0;
          for (int kt = 0; kt < s.kernel.t; ++kt)
            for (int kh = 0; kh < s.kernel.h; ++kh)
              for (int kw = 0; kw < s.kernel.w; ++kw) {
                const Index il = ol * s.stride.t - s.padding.t + kt;
                const Index ih = oh * s.stride.h - s.padding.h + kh;
                const Index iw = ow * s.stride.w - s.padding.w + kw;
                if (il < 0 || il >= L || ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                if (!found || x(il, ih, iw, c) > best) {
                  found = true;
                  best = x(il, ih, iw, c);
                  bl = il, bh = ih, bw = iw;
                }
              }
          r.output(ol, oh, ow, c) = best;
          if (gy) r.grad_input(bl, bh, bw, c) += (*gy)(ol, oh, ow, c);
        }
  return r;
}

// ------------------------------------------------------------ geometry

/// IoU on explicit [start, end] intervals.
inline double interval_iou(double s1, double e1, double s2, double e2) {
  const double lo = std::max(s1, s2), hi = std::min(e1, e2);
  const double inter = hi > lo ? hi - lo : 0.0;
  const double uni = (e1 - s1) + (e2 - s2) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline double span_iou(const Span& a, const Span& b) {
  return interval_iou(a.center - a.length / 2, a.center + a.length / 2, b.center - b.length / 2,
                      b.center + b.length / 2);
}

/// Computes the full IoU table first, then takes each row's first maximum.
inline MatchResult match(const std::vector<Span>& spans, const std::vector<GroundTruth>& truths) {
  MatchResult r;
  const std::size_t n = spans.size(), m = truths.size();
  std::vector<std::vector<double>> iou(n, std::vector<double>(m));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) iou[i][j] = span_iou(spans[i], truths[j].span);
  r.assignment.resize(n);
  r.soft_label.assign(n, 0.0);
  r.target_offsets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (m == 0) continue;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (iou[i][j] > iou[i][arg]) arg = j;
    r.soft_label[i] = iou[i][arg];
    if (iou[i][arg] > 0.5) {
      r.assignment[i] = Assignment{static_cast<int>(arg), truths[arg].label};
      const Span& g = truths[arg].span;
      r.target_offsets[i] = {(g.center - spans[i].center) / spans[i].length, std::log(g.length / spans[i].length)};
    }
  }
  return r;
}

// ------------------------------------------------------------ NMS / AP

/// Greedy NMS by repeated scans for the best remaining candidate.
inline std::vector<std::size_t> nms(const std::vector<ScoredSpan>& c, double threshold) {
  std::vector<bool> alive(c.size(), true);
  std::vector<std::size_t> kept;
  for (;;) {
    std::size_t best = c.size();
    for (std::size_t i = 0; i < c.size(); ++i)
      if (alive[i] && (best == c.size() || c[i].score > c[best].score)) best = i;
    if (best == c.size()) break;
    kept.push_back(best);
    alive[best] = false;
    for (std::size_t i = 0; i < c.size(); ++i)
      if (alive[i] && span_iou(c[i].span, c[best].span) > threshold) alive[i] = false;
  }
  return kept;
}

/// AP as the area under the interpolated PR staircase: for every distinct
/// recall level, the width of the recall step times the best precision seen
/// at that recall or beyond.
inline double average_precision(std::vector<ScoredInterval> dets, const std::vector<TruthInterval>& truths,
                                double threshold) {
  if (truths.empty()) return 0.0;
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<bool> used(truths.size(), false);
  std::vector<double> recall, precision;
  int tp = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    int arg = -1;
    double best = -1.0;
    for (std::size_t j = 0; j < truths.size(); ++j) {
      if (used[j] || truths[j].video_id != dets[i].video_id) continue;
      const double v = interval_iou(dets[i].start_sec, dets[i].end_sec, truths[j].start_sec, truths[j].end_sec);
      if (v > best) best = v, arg = static_cast<int>(j);
    }
    if (arg >= 0 && best >= threshold) used[arg] = true, ++tp;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(truths.size()));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  std::vector<double> levels(recall);
  std::sort(levels.begin(), levels.end());
  levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
  double ap = 0.0, prev = 0.0;
  for (double r : levels) {
    if (r <= 0.0) continue;
    double p = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r) p = std::max(p, precision[i]);
    ap += (r - prev) * p;
    prev = r;
  }
  return ap;
}

// ------------------------------------------------------------ losses

inline double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

inline double loc_loss(const Matrix& off, const BatchTargets& t) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t.assignment[i]) continue;
    ++n;
    sum += smooth_l1(off(i, 0) - t.target_offsets[i].center) + smooth_l1(off(i, 1) - t.target_offsets[i].length);
  }
  return n ? sum / n : 0.0;
}

inline double conf_loss(const Matrix& logits, const BatchTargets& t) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t.assignment[i]) continue;
    ++n;
    double z = 0.0;
    for (Index k = 0; k < logits.cols(); ++k) z += std::exp(logits(i, k));
    sum -= std::log(std::exp(logits(i, t.assignment[i]->label - 1)) / z);
  }
  return n ? sum / n : 0.0;
}

inline double act_loss(const Vector& c, const BatchTargets& t) {
  double sum = 0.0;
  int n = 0;
  auto term = [&](std::size_t i) {
    const double p = std::clamp(c(i), 1e-7, 1.0 - 1e-7);
    const double s = t.soft_label[i];
    sum -= s * std::log(p) + (1.0 - s) * std::log(1.0 - p);
    ++n;
  };
  for (std::size_t i = 0; i < t.size(); ++i)
    if (t.assignment[i]) term(i);
  for (std::size_t i : t.mined) term(i);
  return n ? sum / n : 0.0;
}

// ------------------------------------------------------------ finite differences

/// Central differences of f with respect to every entry of x (x is restored).
inline Vector numeric_gradient(const std::function<double()>& f, double* x, Index n, double h = 1e-5) {
  Vector g(n);
  for (Index i = 0; i < n; ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = f();
    x[i] = saved - h;
    const double down = f();
    x[i] = saved;
    g(i) = (up - down) / (2 * h);
  }
  return g;
}

/// ||a - n|| / max(||a||, ||n||), with an absolute floor so that two
/// vanishing gradients compare equal.
inline double relative_error(const Vector& analytic, const Vector& numeric, double floor = 1e-10) {
  const double scale = std::max({analytic.norm(), numeric.norm(), floor});
  return (analytic - numeric).norm() / scale;
}

}  // namespace s3d::oracle
