#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "s3d/spans.hpp"
#include "s3d/tensor.hpp"

namespace s3d {

using Matrix = RowMatrix<double>;
using Vector = ColVector<double>;

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;

  void validate() const;
};

/// Probabilities are clamped into [eps, 1 - eps] before any log.
inline constexpr double kProbabilityClamp = 1e-7;

/// Matching output for a whole batch, flattened in (window, span) order, plus
/// the negatives chosen by hard negative mining.
struct BatchTargets {
  std::vector<std::optional<Assignment>> assignment;
  std::vector<double> soft_label;
  std::vector<Offsets> target_offsets;
  std::vector<std::size_t> mined;  // ascending span indices, disjoint from positives

  static BatchTargets flatten(std::span<const MatchResult> matches);
  static BatchTargets from(const MatchResult& match) { return flatten(std::span(&match, 1)); }

  std::size_t size() const { return soft_label.size(); }
  std::size_t positive_count() const;
  std::size_t negative_count() const { return mined.size(); }
};

struct LossReport {
  double loc = 0.0;
  double conf = 0.0;
  double act = 0.0;
  double total = 0.0;
};

double smooth_l1(double x);
double smooth_l1_grad(double x);

/// Clamped binary cross-entropy of one activity score against soft label s.
double activity_term(double score, double soft_label);

/// Mean smooth-L1 over positives of (predicted - target) offsets. `offsets`
/// is n x 2 (center, length). Zero without positives. When `grad` is given it
/// receives d loss / d offsets (n x 2).
double localization_loss(const Matrix& offsets, const BatchTargets& targets, Matrix* grad = nullptr);

/// Softmax cross-entropy over positives only, against the matched class.
/// `logits` is n x K; class k sits in column k - 1.
double class_confidence_loss(const Matrix& logits, const BatchTargets& targets, Matrix* grad = nullptr);

/// Sigmoid cross-entropy with soft labels over positives and mined negatives.
/// `scores` are post-sigmoid probabilities.
double activity_confidence_loss(const Vector& scores, const BatchTargets& targets, Vector* grad = nullptr);

/// Picks the min(N_pos, #negatives) negatives with the largest activity loss
/// (one negative when there are no positives). Ties go to the lower index.
std::vector<std::size_t> hard_negative_mining(const Vector& scores, const BatchTargets& targets);

LossReport combine_losses(double loc, double conf, double act, const LossWeights& weights);

/// Joint objective over a prediction matrix with rows (c_1..c_K, c_act, dct, dlt).
/// Mining must already be recorded in `targets`. `grad` receives d total /
/// d predictions with the same layout.
LossReport total_loss(const Matrix& predictions, int num_classes, const BatchTargets& targets,
                      const LossWeights& weights, Matrix* grad = nullptr);

}  // namespace s3d
