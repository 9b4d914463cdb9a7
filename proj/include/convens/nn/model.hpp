#pragma once

#include "convens/nn/layers.hpp"
#include "convens/rng.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace convens {

/// Sequential network with materialized weights. Parameters live in one flat
/// list (weight then bias per parameterized layer) so optimizers and
/// serialization can treat them uniformly.
template <typename Scalar>
class Model {
 public:
  Model() = default;

  /// Validates shape composition and draws He-uniform weights from `seed`.
  Model(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed)
      : input_shape_(std::move(input_shape)), layers_(std::move(layers)), seed_(seed) {
    resolve_shapes();
    initialize();
  }

  /// Rebuild with explicit parameters (deserialization, casting).
  static Model with_parameters(Shape input_shape, std::vector<LayerSpec> layers, std::uint64_t seed,
                               std::vector<Tensor<Scalar>> params) {
    Model m;
    m.input_shape_ = std::move(input_shape);
    m.layers_ = std::move(layers);
    m.seed_ = seed;
    m.resolve_shapes();
    if (params.size() != m.expected_param_shapes_.size()) {
      throw ShapeError("parameter list length does not match layer layout");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].shape() != m.expected_param_shapes_[i]) {
        throw ShapeError("parameter " + std::to_string(i) + " has shape " +
                         shape_string(params[i].shape()) + ", expected " +
                         shape_string(m.expected_param_shapes_[i]));
      }
    }
    m.params_ = std::move(params);
    return m;
  }

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  Index layer_count() const { return static_cast<Index>(layers_.size()); }
  /// Per-sample output shape of layer i.
  const Shape& output_shape(Index i) const { return shapes_.at(static_cast<std::size_t>(i + 1)); }
  /// Per-sample input shape of layer i.
  const Shape& layer_input_shape(Index i) const { return shapes_.at(static_cast<std::size_t>(i)); }
  const Shape& output_shape() const { return shapes_.back(); }
  std::uint64_t seed() const { return seed_; }

  std::vector<Tensor<Scalar>>& parameters() { return params_; }
  const std::vector<Tensor<Scalar>>& parameters() const { return params_; }

  /// Index of layer i's weight in parameters(); bias follows it. -1 if none.
  Index weight_slot(Index layer) const { return weight_slot_.at(static_cast<std::size_t>(layer)); }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  template <typename To>
  Model<To> cast() const {
    std::vector<Tensor<To>> params;
    params.reserve(params_.size());
    for (const auto& p : params_) params.push_back(p.template cast<To>());
    return Model<To>::with_parameters(input_shape_, layers_, seed_, std::move(params));
  }

 private:
  void resolve_shapes() {
    shapes_.clear();
    weight_slot_.clear();
    expected_param_shapes_.clear();
    for (Index e : input_shape_) {
      if (e <= 0) throw ShapeError("model input shape must be positive: " + shape_string(input_shape_));
    }
    shapes_.push_back(input_shape_);
    for (const auto& spec : layers_) {
      const Shape& in = shapes_.back();
      if (spec.has_parameters()) {
        weight_slot_.push_back(static_cast<Index>(expected_param_shapes_.size()));
        expected_param_shapes_.push_back(layer_weight_shape(spec, in));
        expected_param_shapes_.push_back(Shape{spec.units});
      } else {
        weight_slot_.push_back(-1);
      }
      shapes_.push_back(layer_output_shape(spec, in));
    }
  }

  void initialize() {
    Rng rng = make_rng(seed_);
    params_.clear();
    for (std::size_t i = 0; i < expected_param_shapes_.size(); i += 2) {
      const Shape& ws = expected_param_shapes_[i];
      const Index fan_in = shape_product(ws) / ws[0];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor<Scalar> w(ws);
      for (Index k = 0; k < w.size(); ++k) w[k] = static_cast<Scalar>(dist(rng));
      params_.push_back(std::move(w));
      params_.emplace_back(expected_param_shapes_[i + 1]);
    }
  }

  Shape input_shape_;
  std::vector<LayerSpec> layers_;
  std::uint64_t seed_ = 0;
  std::vector<Shape> shapes_;
  std::vector<Index> weight_slot_;
  std::vector<Shape> expected_param_shapes_;
  std::vector<Tensor<Scalar>> params_;
};

/// Activations of every layer for one batch: activations[0] is the input,
/// activations[i + 1] the output of layer i.
template <typename Scalar>
struct ForwardTrace {
  std::vector<Tensor<Scalar>> activations;
  /// Flat input offset of each pooled maximum, per MaxPool2D layer.
  std::vector<std::vector<Index>> pool_argmax;

  const Tensor<Scalar>& output() const { return activations.back(); }
};

template <typename Scalar>
struct Gradients {
  std::vector<Tensor<Scalar>> params;
  Tensor<Scalar> input;
};

template <typename Scalar>
Shape batch_shape(Index batch, const Shape& per_sample) {
  Shape s{batch};
  s.insert(s.end(), per_sample.begin(), per_sample.end());
  return s;
}

template <typename Scalar>
kernels::ConvGeometry conv_geometry(const LayerSpec& spec, const Shape& in) {
  return {in[0], in[1], in[2], spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w};
}

/// Apply layer `i` of `model` to `in`. `argmax` receives pooling provenance.
template <typename Scalar>
Tensor<Scalar> apply_layer(const Model<Scalar>& model, Index i, const Tensor<Scalar>& in,
                           std::vector<Index>* argmax = nullptr) {
  const LayerSpec& spec = model.layers()[static_cast<std::size_t>(i)];
  const Shape& in_shape = model.layer_input_shape(i);
  const Index batch = in.dim(0);
  Tensor<Scalar> out(batch_shape<Scalar>(batch, model.output_shape(i)));
  switch (spec.kind) {
    case LayerKind::Dense: {
      const auto& w = model.parameters()[static_cast<std::size_t>(model.weight_slot(i))];
      const auto& b = model.parameters()[static_cast<std::size_t>(model.weight_slot(i) + 1)];
      auto o = out.matrix();
      o.noalias() = in.matrix() * w.matrix().transpose();
      o.rowwise() += b.values().transpose();
      break;
    }
    case LayerKind::Conv2D: {
      const auto& w = model.parameters()[static_cast<std::size_t>(model.weight_slot(i))];
      const auto& b = model.parameters()[static_cast<std::size_t>(model.weight_slot(i) + 1)];
      const auto g = conv_geometry<Scalar>(spec, in_shape);
      const auto cols = kernels::im2col(in, g, 0, batch, 0, g.channels);
      const auto wmat = Eigen::Map<const RowMatrix<Scalar>>(w.data(), spec.units, g.patch());
      ColMatrix<Scalar> res = wmat * cols;
      res.colwise() += b.values();
      kernels::scatter_conv_output(res, spec.units, g.positions(), 0, 0, out);
      break;
    }
    case LayerKind::MaxPool2D: {
      const Index c = in_shape[0], h = in_shape[1], w = in_shape[2];
      const Index oh = out.dim(2), ow = out.dim(3);
      if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
      Index o = 0;
      for (Index b = 0; b < batch; ++b) {
        for (Index ch = 0; ch < c; ++ch) {
          const Index plane = (b * c + ch) * h * w;
          for (Index y = 0; y < oh; ++y) {
            for (Index x = 0; x < ow; ++x, ++o) {
              Index best = plane + (y * spec.stride_h) * w + x * spec.stride_w;
              for (Index ky = 0; ky < spec.kernel_h; ++ky) {
                for (Index kx = 0; kx < spec.kernel_w; ++kx) {
                  const Index idx = plane + (y * spec.stride_h + ky) * w + x * spec.stride_w + kx;
                  if (in[idx] > in[best]) best = idx;
                }
              }
              out[o] = in[best];
              if (argmax) (*argmax)[static_cast<std::size_t>(o)] = best;
            }
          }
        }
      }
      break;
    }
    case LayerKind::Flatten:
      out.values() = in.values();
      break;
    case LayerKind::Activation:
      if (spec.activation == ActivationKind::ReLU) {
        out.values() = in.values().cwiseMax(Scalar(0));
      } else {
        out.values() = in.values();
      }
      break;
  }
  return out;
}

template <typename Scalar>
void check_batch(const Model<Scalar>& model, const Tensor<Scalar>& batch) {
  if (batch.rank() != static_cast<Index>(model.input_shape().size()) + 1 ||
      !std::equal(model.input_shape().begin(), model.input_shape().end(), batch.shape().begin() + 1)) {
    throw ShapeError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(model.input_shape()));
  }
}

/// Forward pass recording every activation; layers [0, stop) are applied.
template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const Model<Scalar>& model, const Tensor<Scalar>& batch,
                                   std::optional<Index> stop = std::nullopt) {
  check_batch(model, batch);
  const Index end = stop.value_or(model.layer_count());
  ForwardTrace<Scalar> trace;
  trace.activations.reserve(static_cast<std::size_t>(end + 1));
  trace.pool_argmax.resize(static_cast<std::size_t>(end));
  trace.activations.push_back(batch);
  for (Index i = 0; i < end; ++i) {
    trace.activations.push_back(
        apply_layer(model, i, trace.activations.back(), &trace.pool_argmax[static_cast<std::size_t>(i)]));
  }
  require_finite(trace.activations.back(), "forward output");
  return trace;
}

/// Output activations of `model` (or of its first `stop` layers) on `batch`.
template <typename Scalar>
Tensor<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& batch,
                       std::optional<Index> stop = std::nullopt) {
  check_batch(model, batch);
  const Index end = stop.value_or(model.layer_count());
  Tensor<Scalar> act = batch;
  for (Index i = 0; i < end; ++i) act = apply_layer(model, i, act);
  require_finite(act, "forward output");
  return act;
}

/// Backpropagate through layer i. Parameter gradients are written into `grads`.
template <typename Scalar>
Tensor<Scalar> backprop_layer(const Model<Scalar>& model, Index i, const ForwardTrace<Scalar>& trace,
                              const Tensor<Scalar>& grad_out, std::vector<Tensor<Scalar>>& grads) {
  const LayerSpec& spec = model.layers()[static_cast<std::size_t>(i)];
  const Tensor<Scalar>& in = trace.activations[static_cast<std::size_t>(i)];
  const Index batch = in.dim(0);
  Tensor<Scalar> grad_in(in.shape());
  switch (spec.kind) {
    case LayerKind::Dense: {
      const auto slot = static_cast<std::size_t>(model.weight_slot(i));
      const auto& w = model.parameters()[slot];
      grads[slot].matrix().noalias() = grad_out.matrix().transpose() * in.matrix();
      grads[slot + 1].values() = grad_out.matrix().colwise().sum().transpose();
      grad_in.matrix().noalias() = grad_out.matrix() * w.matrix();
      break;
    }
    case LayerKind::Conv2D: {
      const auto slot = static_cast<std::size_t>(model.weight_slot(i));
      const auto& w = model.parameters()[slot];
      const auto g = conv_geometry<Scalar>(spec, model.layer_input_shape(i));
      const auto cols = kernels::im2col(in, g, 0, batch, 0, g.channels);
      const auto dout = kernels::gather_conv_output(grad_out, spec.units, g.positions(), 0, batch, 0, spec.units);
      const auto wmat = Eigen::Map<const RowMatrix<Scalar>>(w.data(), spec.units, g.patch());
      Eigen::Map<RowMatrix<Scalar>>(grads[slot].data(), spec.units, g.patch()).noalias() =
          dout * cols.transpose();
      grads[slot + 1].values() = dout.rowwise().sum();
      ColMatrix<Scalar> dcols = wmat.transpose() * dout;
      kernels::col2im_add(dcols, g, 0, batch, 0, g.channels, grad_in);
      break;
    }
    case LayerKind::MaxPool2D: {
      const auto& argmax = trace.pool_argmax[static_cast<std::size_t>(i)];
      for (Index o = 0; o < grad_out.size(); ++o) grad_in[argmax[static_cast<std::size_t>(o)]] += grad_out[o];
      break;
    }
    case LayerKind::Flatten:
      grad_in.values() = grad_out.values();
      break;
    case LayerKind::Activation:
      if (spec.activation == ActivationKind::ReLU) {
        grad_in.values() = (in.values().array() > Scalar(0)).select(grad_out.values(), Scalar(0));
      } else {
        grad_in.values() = grad_out.values();
      }
      break;
  }
  return grad_in;
}

/// Exact gradients of a scalar loss given d(loss)/d(output).
template <typename Scalar>
Gradients<Scalar> backward(const Model<Scalar>& model, const ForwardTrace<Scalar>& trace,
                           const Tensor<Scalar>& output_grad) {
  if (output_grad.shape() != trace.output().shape()) {
    throw ShapeError("output gradient shape " + shape_string(output_grad.shape()) +
                     " does not match output " + shape_string(trace.output().shape()));
  }
  Gradients<Scalar> g;
  g.params.reserve(model.parameters().size());
  for (const auto& p : model.parameters()) g.params.emplace_back(p.shape());
  Tensor<Scalar> grad = output_grad;
  for (Index i = model.layer_count() - 1; i >= 0; --i) grad = backprop_layer(model, i, trace, grad, g.params);
  g.input = std::move(grad);
  return g;
}

}  // namespace convens
