#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "s3d/tensor.hpp"

namespace s3d {

enum class LayerKind { Conv3d, MaxPool3d, Relu, Sigmoid };

struct Extent3 {
  int t = 1;
  int h = 1;
  int w = 1;

  friend bool operator==(const Extent3&, const Extent3&) = default;
};

/// Shape of one [L, H, W, C] activation.
struct Volume {
  Index length = 0;
  Index height = 0;
  Index width = 0;
  Index channels = 0;

  friend bool operator==(const Volume&, const Volume&) = default;

  std::vector<Index> shape() const { return {length, height, width, channels}; }
  std::string str() const {
    return std::to_string(length) + "x" + std::to_string(height) + "x" + std::to_string(width) +
           "x" + std::to_string(channels);
  }
};

template <typename Scalar>
Volume volume_of(const Tensor<Scalar>& t) {
  if (t.rank() != 4) throw ConfigError("expected a rank-4 [L,H,W,C] tensor, got " + shape_string(t.shape()));
  return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)};
}

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  int in_channels = 0;
  int out_channels = 0;
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding{0, 0, 0};
  bool is_feature_layer = false;

  static LayerSpec conv(int in, int out, Extent3 kernel, Extent3 stride = {}, Extent3 padding = {0, 0, 0}) {
    return {LayerKind::Conv3d, in, out, kernel, stride, padding, false};
  }
  static LayerSpec pool(Extent3 kernel, Extent3 stride, Extent3 padding = {0, 0, 0}) {
    return {LayerKind::MaxPool3d, 0, 0, kernel, stride, padding, false};
  }
  static LayerSpec relu() { return {}; }
  static LayerSpec sigmoid() { return {LayerKind::Sigmoid, 0, 0, {}, {}, {0, 0, 0}, false}; }

  bool has_parameters() const { return kind == LayerKind::Conv3d; }
  Index weight_rows() const { return Index{kernel.t} * kernel.h * kernel.w * in_channels; }

  /// Output shape per floor((n + 2 pad - k) / s) + 1 on each axis. Throws
  /// ConfigError when the input is incompatible.
  Volume output_volume(const Volume& in) const;
};

const char* layer_kind_name(LayerKind kind);
LayerKind parse_layer_kind(const std::string& name);

inline Index pooled_extent(Index n, int k, int s, int p) {
  return (n + 2 * Index{p} - k) / s + 1;
}

inline Volume LayerSpec::output_volume(const Volume& in) const {
  if (kind == LayerKind::Relu || kind == LayerKind::Sigmoid) return in;
  if (kernel.t < 1 || kernel.h < 1 || kernel.w < 1 || stride.t < 1 || stride.h < 1 || stride.w < 1) {
    throw ConfigError("layer: kernel and stride must be >= 1");
  }
  if (padding.t < 0 || padding.h < 0 || padding.w < 0) throw ConfigError("layer: negative padding");
  if (in.length + 2 * padding.t < kernel.t || in.height + 2 * padding.h < kernel.h ||
      in.width + 2 * padding.w < kernel.w) {
    throw ConfigError("layer: kernel " + std::to_string(kernel.t) + "x" + std::to_string(kernel.h) + "x" +
                      std::to_string(kernel.w) + " larger than padded input " + in.str());
  }
  Volume out{pooled_extent(in.length, kernel.t, stride.t, padding.t),
             pooled_extent(in.height, kernel.h, stride.h, padding.h),
             pooled_extent(in.width, kernel.w, stride.w, padding.w), in.channels};
  if (kind == LayerKind::Conv3d) {
    if (in.channels != in_channels) {
      throw ConfigError("conv3d: expects " + std::to_string(in_channels) + " input channels, got " +
                        std::to_string(in.channels));
    }
    out.channels = out_channels;
  } else if (padding.t >= kernel.t || padding.h >= kernel.h || padding.w >= kernel.w) {
    throw ConfigError("maxpool3d: padding must be smaller than the kernel");
  }
  return out;
}

/// Conv3d parameters. Weights are a (kt*kh*kw*C_in) x C_out matrix whose rows
/// follow the [kt][kh][kw][c_in] order of an unfolded input patch.
template <typename Scalar>
struct ConvParams {
  RowMatrix<Scalar> weights;
  ColVector<Scalar> bias;

  static ConvParams zeros(const LayerSpec& spec) {
    return {RowMatrix<Scalar>::Zero(spec.weight_rows(), spec.out_channels),
            ColVector<Scalar>::Zero(spec.out_channels)};
  }
};

template <typename Scalar>
struct ConvGrads {
  Tensor<Scalar> input;
  RowMatrix<Scalar> weights;
  ColVector<Scalar> bias;
};

namespace detail {

/// Calls fn(patch_row, column_block, input_offset_or_-1) for each
/// (output position, kernel tap). input offsets address the first channel.
template <typename Fn>
void for_each_tap(const Volume& in, const Volume& out, const LayerSpec& spec, Fn&& fn) {
  Index row = 0;
  for (Index ol = 0; ol < out.length; ++ol) {
    for (Index oh = 0; oh < out.height; ++oh) {
      for (Index ow = 0; ow < out.width; ++ow, ++row) {
        Index block = 0;
        for (int kt = 0; kt < spec.kernel.t; ++kt) {
          const Index il = ol * spec.stride.t - spec.padding.t + kt;
          for (int kh = 0; kh < spec.kernel.h; ++kh) {
            const Index ih = oh * spec.stride.h - spec.padding.h + kh;
            for (int kw = 0; kw < spec.kernel.w; ++kw, ++block) {
              const Index iw = ow * spec.stride.w - spec.padding.w + kw;
              const bool inside = il >= 0 && il < in.length && ih >= 0 && ih < in.height && iw >= 0 &&
                                  iw < in.width;
              fn(row, block, inside ? ((il * in.height + ih) * in.width + iw) * in.channels : Index{-1});
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Unfolds every receptive field of `input` into one row of the result.
template <typename Scalar>
RowMatrix<Scalar> im2col(const Tensor<Scalar>& input, const LayerSpec& spec) {
  const Volume in = volume_of(input);
  const Volume out = spec.output_volume(in);
  const Index c = in.channels;
  RowMatrix<Scalar> patches(out.length * out.height * out.width, spec.weight_rows());
  const Scalar* src = input.data();
  detail::for_each_tap(in, out, spec, [&](Index row, Index block, Index offset) {
    Scalar* dst = patches.data() + row * patches.cols() + block * c;
    if (offset < 0) {
      std::fill(dst, dst + c, Scalar(0));
    } else {
      std::copy(src + offset, src + offset + c, dst);
    }
  });
  return patches;
}

/// Adjoint of im2col: scatter-adds patch rows back onto an input-shaped tensor.
template <typename Scalar>
Tensor<Scalar> col2im(const RowMatrix<Scalar>& patches, const Volume& in, const LayerSpec& spec) {
  const Volume out = spec.output_volume(in);
  Tensor<Scalar> result(in.shape());
  const Index c = in.channels;
  Scalar* dst = result.data();
  detail::for_each_tap(in, out, spec, [&](Index row, Index block, Index offset) {
    if (offset < 0) return;
    const Scalar* src = patches.data() + row * patches.cols() + block * c;
    for (Index k = 0; k < c; ++k) dst[offset + k] += src[k];
  });
  return result;
}

/// Sliding-window cross-correlation plus bias.
template <typename Scalar>
Tensor<Scalar> conv3d_forward(const Tensor<Scalar>& input, const ConvParams<Scalar>& params,
                              const LayerSpec& spec) {
  const Volume out = spec.output_volume(volume_of(input));
  if (params.weights.rows() != spec.weight_rows() || params.weights.cols() != spec.out_channels ||
      params.bias.size() != spec.out_channels) {
    throw ConfigError("conv3d: parameter shape does not match layer spec");
  }
  Tensor<Scalar> result(out.shape());
  auto y = result.matrix();
  y.noalias() = im2col(input, spec) * params.weights;
  y.rowwise() += params.bias.transpose();
  return result;
}

template <typename Scalar>
ConvGrads<Scalar> conv3d_backward(const Tensor<Scalar>& grad_out, const Tensor<Scalar>& input,
                                  const ConvParams<Scalar>& params, const LayerSpec& spec,
                                  bool input_gradient = true) {
  const Volume in = volume_of(input);
  if (volume_of(grad_out) != spec.output_volume(in)) {
    throw ConfigError("conv3d backward: gradient shape " + shape_string(grad_out.shape()) +
                      " does not match forward output");
  }
  const auto g = grad_out.matrix();
  ConvGrads<Scalar> grads;
  grads.weights.noalias() = im2col(input, spec).transpose() * g;
  grads.bias = g.colwise().sum().transpose();
  if (input_gradient) {
    RowMatrix<Scalar> grad_patches = g * params.weights.transpose();
    grads.input = col2im(grad_patches, in, spec);
  }
  return grads;
}

template <typename Scalar>
struct PoolResult {
  Tensor<Scalar> output;
  std::vector<Index> argmax;  // flat input index feeding each output element
};

/// Max pooling. Padded cells never win; ties go to the first element in
/// (t, h, w) scan order.
template <typename Scalar>
PoolResult<Scalar> maxpool3d_forward(const Tensor<Scalar>& input, const LayerSpec& spec) {
  const Volume in = volume_of(input);
  const Volume out = spec.output_volume(in);
  PoolResult<Scalar> r{Tensor<Scalar>(out.shape()), std::vector<Index>(static_cast<std::size_t>(
                                                         out.length * out.height * out.width * out.channels))};
  const Index c = in.channels;
  std::vector<Scalar> best(static_cast<std::size_t>(c));
  std::vector<Index> where(static_cast<std::size_t>(c));
  Index row_prev = -1;
  auto flush = [&](Index row) {
    for (Index k = 0; k < c; ++k) {
      r.output.data()[row * c + k] = best[k];
      r.argmax[row * c + k] = where[k];
    }
  };
  detail::for_each_tap(in, out, spec, [&](Index row, Index, Index offset) {
    if (row != row_prev) {
      if (row_prev >= 0) flush(row_prev);
      std::fill(best.begin(), best.end(), -std::numeric_limits<Scalar>::infinity());
      std::fill(where.begin(), where.end(), Index{-1});
      row_prev = row;
    }
    if (offset < 0) return;
    for (Index k = 0; k < c; ++k) {
      const Scalar v = input.data()[offset + k];
      if (where[k] < 0 || v > best[k]) {
        best[k] = v;
        where[k] = offset + k;
      }
    }
  });
  if (row_prev >= 0) flush(row_prev);
  return r;
}

template <typename Scalar>
Tensor<Scalar> maxpool3d_backward(const Tensor<Scalar>& grad_out, const std::vector<Index>& argmax,
                                  const Volume& in) {
  Tensor<Scalar> grad(in.shape());
  for (Index i = 0; i < grad_out.size(); ++i) grad.data()[argmax[i]] += grad_out.data()[i];
  return grad;
}

template <typename Scalar>
Tensor<Scalar> relu_forward(Tensor<Scalar> x) {
  x.flat() = x.flat().cwiseMax(Scalar(0));
  return x;
}

/// Gradient of relu at the given forward output (zero at the kink).
template <typename Scalar>
Tensor<Scalar> relu_backward(Tensor<Scalar> grad_out, const Tensor<Scalar>& output) {
  grad_out.flat() = (output.flat().array() > Scalar(0)).select(grad_out.flat(), Scalar(0));
  return grad_out;
}

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  if (z >= 0) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Tensor<Scalar> sigmoid_forward(Tensor<Scalar> x) {
  x.flat() = x.flat().unaryExpr([](Scalar z) { return sigmoid(z); });
  return x;
}

template <typename Scalar>
Tensor<Scalar> sigmoid_backward(Tensor<Scalar> grad_out, const Tensor<Scalar>& output) {
  grad_out.flat().array() *= output.flat().array() * (Scalar(1) - output.flat().array());
  return grad_out;
}

}  // namespace s3d
