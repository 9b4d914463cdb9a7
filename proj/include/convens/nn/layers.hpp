#pragma once

#include "convens/nn/tensor.hpp"

#include <string>

namespace convens {

enum class LayerKind { Conv2D, MaxPool2D, Dense, Flatten, Activation };
enum class ActivationKind { ReLU, Identity };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  /// Filters for Conv2D, units for Dense.
  Index units = 0;
  Index kernel_h = 0;
  Index kernel_w = 0;
  Index stride_h = 1;
  Index stride_w = 1;
  ActivationKind activation = ActivationKind::Identity;

  static LayerSpec conv2d(Index filters, Index kh, Index kw, Index sh = 1, Index sw = 1) {
    return {LayerKind::Conv2D, filters, kh, kw, sh, sw, ActivationKind::Identity};
  }
  static LayerSpec maxpool2d(Index kh, Index kw) {
    return {LayerKind::MaxPool2D, 0, kh, kw, kh, kw, ActivationKind::Identity};
  }
  static LayerSpec dense(Index units) {
    return {LayerKind::Dense, units, 0, 0, 1, 1, ActivationKind::Identity};
  }
  static LayerSpec flatten() { return {LayerKind::Flatten, 0, 0, 0, 1, 1, ActivationKind::Identity}; }
  static LayerSpec relu() { return {LayerKind::Activation, 0, 0, 0, 1, 1, ActivationKind::ReLU}; }
  static LayerSpec identity() {
    return {LayerKind::Activation, 0, 0, 0, 1, 1, ActivationKind::Identity};
  }

  bool has_parameters() const { return kind == LayerKind::Conv2D || kind == LayerKind::Dense; }
  bool operator==(const LayerSpec&) const = default;
};

std::string to_string(LayerKind kind);
std::string describe(const LayerSpec& spec);

/// Per-sample output shape (no batch axis) of `spec` applied to `in`.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in);

/// Weight shape for a parameterized layer given its per-sample input shape.
Shape layer_weight_shape(const LayerSpec& spec, const Shape& in);

/// Closed-form parameter count: Dense in*out+out, Conv F*(C*KH*KW+1).
Index layer_parameter_count(const LayerSpec& spec, const Shape& in);

namespace kernels {

// Dense: out(B, O) = in(B, I) * W(O, I)^T + b.

template <typename Scalar, typename In, typename W>
RowMatrix<Scalar> dense_product(const Eigen::MatrixBase<In>& in, const Eigen::MatrixBase<W>& weight) {
  RowMatrix<Scalar> out(in.rows(), weight.rows());
  out.noalias() = in * weight.transpose();
  return out;
}

/// Geometry of a valid-padding strided 2-D convolution.
struct ConvGeometry {
  Index channels = 0, height = 0, width = 0;
  Index kernel_h = 0, kernel_w = 0;
  Index stride_h = 1, stride_w = 1;
  Index out_h() const { return (height - kernel_h) / stride_h + 1; }
  Index out_w() const { return (width - kernel_w) / stride_w + 1; }
  Index positions() const { return out_h() * out_w(); }
  Index patch() const { return channels * kernel_h * kernel_w; }
};

/// Unfold channels [c0, c1) of samples [b0, b1) into a (patch, samples*positions) matrix.
template <typename Scalar>
ColMatrix<Scalar> im2col(const Tensor<Scalar>& input, const ConvGeometry& g, Index b0, Index b1,
                         Index c0, Index c1) {
  const Index kk = g.kernel_h * g.kernel_w;
  const Index rows = (c1 - c0) * kk;
  const Index positions = g.positions();
  const Index ow = g.out_w();
  ColMatrix<Scalar> cols(rows, (b1 - b0) * positions);
  const Index sample_stride = g.channels * g.height * g.width;
  for (Index b = b0; b < b1; ++b) {
    const Scalar* sample = input.data() + b * sample_stride;
    for (Index p = 0; p < positions; ++p) {
      const Index oy = p / ow, ox = p % ow;
      Scalar* col = cols.data() + ((b - b0) * positions + p) * rows;
      Index r = 0;
      for (Index c = c0; c < c1; ++c) {
        const Scalar* plane = sample + c * g.height * g.width;
        for (Index ky = 0; ky < g.kernel_h; ++ky) {
          const Scalar* row = plane + (oy * g.stride_h + ky) * g.width + ox * g.stride_w;
          for (Index kx = 0; kx < g.kernel_w; ++kx) col[r++] = row[kx];
        }
      }
    }
  }
  return cols;
}

/// Fold a (patch, samples*positions) gradient back onto input channels [c0, c1).
template <typename Scalar>
void col2im_add(const ColMatrix<Scalar>& cols, const ConvGeometry& g, Index b0, Index b1, Index c0,
                Index c1, Tensor<Scalar>& grad_input) {
  const Index rows = cols.rows();
  const Index positions = g.positions();
  const Index ow = g.out_w();
  const Index sample_stride = g.channels * g.height * g.width;
  for (Index b = b0; b < b1; ++b) {
    Scalar* sample = grad_input.data() + b * sample_stride;
    for (Index p = 0; p < positions; ++p) {
      const Index oy = p / ow, ox = p % ow;
      const Scalar* col = cols.data() + ((b - b0) * positions + p) * rows;
      Index r = 0;
      for (Index c = c0; c < c1; ++c) {
        Scalar* plane = sample + c * g.height * g.width;
        for (Index ky = 0; ky < g.kernel_h; ++ky) {
          Scalar* row = plane + (oy * g.stride_h + ky) * g.width + ox * g.stride_w;
          for (Index kx = 0; kx < g.kernel_w; ++kx) row[kx] += col[r++];
        }
      }
    }
  }
}

/// (F, samples*positions) <-> NCHW output layout, filters [f0, f1) of samples [b0, b1).
template <typename Scalar>
void scatter_conv_output(const ColMatrix<Scalar>& mat, Index filters, Index positions, Index b0,
                         Index f0, Tensor<Scalar>& out) {
  const Index nb = mat.cols() / positions;
  for (Index b = 0; b < nb; ++b) {
    for (Index f = 0; f < mat.rows(); ++f) {
      Scalar* dst = out.data() + ((b0 + b) * filters + f0 + f) * positions;
      for (Index p = 0; p < positions; ++p) dst[p] = mat(f, b * positions + p);
    }
  }
}

template <typename Scalar>
ColMatrix<Scalar> gather_conv_output(const Tensor<Scalar>& grad, Index filters, Index positions,
                                     Index b0, Index b1, Index f0, Index f1) {
  ColMatrix<Scalar> mat(f1 - f0, (b1 - b0) * positions);
  for (Index b = b0; b < b1; ++b) {
    for (Index f = f0; f < f1; ++f) {
      const Scalar* src = grad.data() + (b * filters + f) * positions;
      for (Index p = 0; p < positions; ++p) mat(f - f0, (b - b0) * positions + p) = src[p];
    }
  }
  return mat;
}

}  // namespace kernels
}  // namespace convens
