#include "s3d/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "s3d/error.hpp"

namespace s3d {

void LossWeights::validate() const {
  if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0.0 || beta < 0.0) {
    throw ConfigError("loss weights must be finite and non-negative");
  }
}

BatchTargets BatchTargets::flatten(std::span<const MatchResult> matches) {
  BatchTargets t;
  for (const auto& m : matches) {
    t.assignment.insert(t.assignment.end(), m.assignment.begin(), m.assignment.end());
    t.soft_label.insert(t.soft_label.end(), m.soft_label.begin(), m.soft_label.end());
    t.target_offsets.insert(t.target_offsets.end(), m.target_offsets.begin(), m.target_offsets.end());
  }
  return t;
}

std::size_t BatchTargets::positive_count() const {
  return static_cast<std::size_t>(
      std::count_if(assignment.begin(), assignment.end(), [](const auto& a) { return a.has_value(); }));
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x <= -1.0) return -1.0;
  if (x >= 1.0) return 1.0;
  return x;
}

namespace {

double clamp_probability(double p) {
  return std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
}

void check_rows(Index rows, const BatchTargets& targets, const char* what) {
  if (static_cast<std::size_t>(rows) != targets.size()) {
    throw InputError(std::string(what) + ": " + std::to_string(rows) + " predictions for " +
                     std::to_string(targets.size()) + " spans");
  }
}

}  // namespace

double activity_term(double score, double soft_label) {
  const double c = clamp_probability(score);
  return -(soft_label * std::log(c) + (1.0 - soft_label) * std::log(1.0 - c));
}

double localization_loss(const Matrix& offsets, const BatchTargets& targets, Matrix* grad) {
  check_rows(offsets.rows(), targets, "localization loss");
  if (grad) *grad = Matrix::Zero(offsets.rows(), 2);
  const std::size_t positives = targets.positive_count();
  if (positives == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(positives);
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets.assignment[i]) continue;
    const double rc = offsets(i, 0) - targets.target_offsets[i].center;
    const double rl = offsets(i, 1) - targets.target_offsets[i].length;
    sum += smooth_l1(rc) + smooth_l1(rl);
    if (grad) {
      (*grad)(i, 0) = smooth_l1_grad(rc) * inv_n;
      (*grad)(i, 1) = smooth_l1_grad(rl) * inv_n;
    }
  }
  return sum * inv_n;
}

double class_confidence_loss(const Matrix& logits, const BatchTargets& targets, Matrix* grad) {
  check_rows(logits.rows(), targets, "class confidence loss");
  if (grad) *grad = Matrix::Zero(logits.rows(), logits.cols());
  const std::size_t positives = targets.positive_count();
  if (positives == 0) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(positives);
  double sum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets.assignment[i]) continue;
    const int k = targets.assignment[i]->label - 1;
    if (k < 0 || k >= logits.cols()) {
      throw InputError("class confidence loss: label " + std::to_string(k + 1) + " outside logits");
    }
    const auto row = logits.row(static_cast<Index>(i));
    const double top = row.maxCoeff();
    const Eigen::RowVectorXd shifted = row.array() - top;
    const double log_z = std::log(shifted.array().exp().sum());
    sum += log_z - shifted(k);
    if (grad) {
      Eigen::RowVectorXd p = (shifted.array() - log_z).exp();
      p(k) -= 1.0;
      grad->row(static_cast<Index>(i)) = p * inv_n;
    }
  }
  return sum * inv_n;
}

double activity_confidence_loss(const Vector& scores, const BatchTargets& targets, Vector* grad) {
  check_rows(scores.size(), targets, "activity confidence loss");
  if (grad) *grad = Vector::Zero(scores.size());
  std::vector<std::size_t> used;
  used.reserve(targets.positive_count() + targets.mined.size());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets.assignment[i]) used.push_back(i);
  }
  used.insert(used.end(), targets.mined.begin(), targets.mined.end());
  if (used.empty()) return 0.0;
  const double inv_n = 1.0 / static_cast<double>(used.size());
  double sum = 0.0;
  for (std::size_t i : used) {
    const double s = targets.soft_label[i];
    sum += activity_term(scores[i], s);
    if (grad) {
      const double c = scores[i];
      // The clamp is flat outside its range.
      if (c > kProbabilityClamp && c < 1.0 - kProbabilityClamp) {
        (*grad)[i] = -(s / c - (1.0 - s) / (1.0 - c)) * inv_n;
      }
    }
  }
  return sum * inv_n;
}

std::vector<std::size_t> hard_negative_mining(const Vector& scores, const BatchTargets& targets) {
  check_rows(scores.size(), targets, "hard negative mining");
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!targets.assignment[i]) negatives.push_back(i);
  }
  const std::size_t positives = targets.positive_count();
  const std::size_t want = std::min(positives == 0 ? std::size_t{1} : positives, negatives.size());

  std::vector<double> loss(targets.size(), 0.0);
  for (std::size_t i : negatives) loss[i] = activity_term(scores[i], targets.soft_label[i]);
  std::stable_sort(negatives.begin(), negatives.end(),
                   [&](std::size_t a, std::size_t b) { return loss[a] > loss[b]; });
  negatives.resize(want);
  std::sort(negatives.begin(), negatives.end());
  return negatives;
}

LossReport combine_losses(double loc, double conf, double act, const LossWeights& weights) {
  return LossReport{loc, conf, act, loc + weights.alpha * conf + weights.beta * act};
}

LossReport total_loss(const Matrix& predictions, int num_classes, const BatchTargets& targets,
                      const LossWeights& weights, Matrix* grad) {
  if (predictions.cols() != num_classes + 3) {
    throw InputError("total loss: prediction rows have " + std::to_string(predictions.cols()) +
                     " entries, expected K + 3 = " + std::to_string(num_classes + 3));
  }
  const Index k = num_classes;
  const Matrix logits = predictions.leftCols(k);
  const Vector act = predictions.col(k);
  const Matrix offsets = predictions.rightCols(2);

  Matrix g_conf, g_loc;
  Vector g_act;
  const double conf = class_confidence_loss(logits, targets, grad ? &g_conf : nullptr);
  const double act_loss = activity_confidence_loss(act, targets, grad ? &g_act : nullptr);
  const double loc = localization_loss(offsets, targets, grad ? &g_loc : nullptr);
  if (grad) {
    grad->resize(predictions.rows(), predictions.cols());
    grad->leftCols(k) = weights.alpha * g_conf;
    grad->col(k) = weights.beta * g_act;
    grad->rightCols(2) = g_loc;
  }
  return combine_losses(loc, conf, act_loss, weights);
}

}  // namespace s3d
