#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "s3d/error.hpp"

namespace s3d {

using Index = Eigen::Index;

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using ColVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense row-major N-d array. Video-like tensors use the [L, H, W, C] layout
/// with channels innermost.
template <typename Scalar>
class Tensor {
 public:
  using Shape = std::vector<Index>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    for (Index d : shape_) {
      if (d <= 0) throw ConfigError("tensor: non-positive dimension");
    }
    data_ = ColVector<Scalar>::Zero(element_count(shape_));
  }
  Tensor(std::initializer_list<Index> shape) : Tensor(Shape(shape)) {}

  static Tensor constant(Shape shape, Scalar value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }
  ColVector<Scalar>& flat() { return data_; }
  const ColVector<Scalar>& flat() const { return data_; }

  /// View as a matrix whose columns are the innermost dimension.
  Eigen::Map<RowMatrix<Scalar>> matrix() {
    return {data_.data(), data_.size() / shape_.back(), shape_.back()};
  }
  Eigen::Map<const RowMatrix<Scalar>> matrix() const {
    return {data_.data(), data_.size() / shape_.back(), shape_.back()};
  }

  Scalar& operator()(Index l, Index h, Index w, Index c) { return data_[offset(l, h, w, c)]; }
  Scalar operator()(Index l, Index h, Index w, Index c) const { return data_[offset(l, h, w, c)]; }

  Index offset(Index l, Index h, Index w, Index c) const {
    return ((l * shape_[1] + h) * shape_[2] + w) * shape_[3] + c;
  }

  bool all_finite() const { return data_.allFinite(); }

  static Index element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  ColVector<Scalar> data_;
};

using TensorD = Tensor<double>;

inline std::string shape_string(const std::vector<Index>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace s3d
