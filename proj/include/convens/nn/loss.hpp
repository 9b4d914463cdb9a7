#pragma once

#include "convens/nn/model.hpp"

#include <algorithm>
#include <cmath>

namespace convens {

enum class LossKind { CrossEntropy, MSE };

/// Probabilities are clamped to [kProbabilityFloor, 1] before the log.
inline constexpr double kProbabilityFloor = 1e-12;

/// Row-wise softmax of a (batch, classes) tensor.
template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  Tensor<Scalar> out(logits.shape());
  auto in = logits.matrix();
  auto o = out.matrix();
  for (Index r = 0; r < in.rows(); ++r) {
    const Scalar m = in.row(r).maxCoeff();
    o.row(r) = (in.row(r).array() - m).exp().matrix();
    o.row(r) /= o.row(r).sum();
  }
  return out;
}

/// Mean over rows of -sum_j y_j log(p_j).
template <typename Scalar>
double loss_cross_entropy(const Tensor<Scalar>& probs, const Tensor<Scalar>& onehot) {
  if (probs.shape() != onehot.shape()) {
    throw ShapeError("cross-entropy shape mismatch: " + shape_string(probs.shape()) + " vs " +
                     shape_string(onehot.shape()));
  }
  if (probs.rows() == 0) return 0.0;
  double total = 0.0;
  for (Index k = 0; k < probs.size(); ++k) {
    if (onehot[k] != Scalar(0)) {
      const double p = std::clamp(static_cast<double>(probs[k]), kProbabilityFloor, 1.0);
      total -= static_cast<double>(onehot[k]) * std::log(p);
    }
  }
  return total / static_cast<double>(probs.rows());
}

/// Mean over every element of (pred - target)^2.
template <typename Scalar>
double loss_mse(const Tensor<Scalar>& pred, const Tensor<Scalar>& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("MSE shape mismatch: " + shape_string(pred.shape()) + " vs " +
                     shape_string(target.shape()));
  }
  if (pred.size() == 0) return 0.0;
  return (pred.values() - target.values()).template cast<double>().squaredNorm() /
         static_cast<double>(pred.size());
}

template <typename Scalar>
struct LossGradient {
  double loss = 0.0;
  Tensor<Scalar> output_grad;
};

/// Loss of raw model outputs and its gradient w.r.t. those outputs. For
/// cross-entropy the outputs are logits and softmax is applied here.
template <typename Scalar>
LossGradient<Scalar> loss_and_gradient(const Tensor<Scalar>& output, const Tensor<Scalar>& target,
                                       LossKind kind) {
  if (output.shape() != target.shape()) {
    throw ShapeError("loss target shape " + shape_string(target.shape()) + " does not match output " +
                     shape_string(output.shape()));
  }
  LossGradient<Scalar> r;
  if (kind == LossKind::CrossEntropy) {
    const auto probs = softmax(output);
    r.loss = loss_cross_entropy(probs, target);
    r.output_grad = Tensor<Scalar>(output.shape(),
                                   (probs.values() - target.values()) / static_cast<Scalar>(output.rows()));
  } else {
    r.loss = loss_mse(output, target);
    r.output_grad = Tensor<Scalar>(output.shape(), (output.values() - target.values()) *
                                                       (Scalar(2) / static_cast<Scalar>(output.size())));
  }
  return r;
}

template <typename Scalar>
struct LossAndGradients {
  double loss = 0.0;
  Tensor<Scalar> output;
  Gradients<Scalar> grads;
};

template <typename Scalar>
LossAndGradients<Scalar> backward(const Model<Scalar>& model, const Tensor<Scalar>& batch,
                                  const Tensor<Scalar>& target, LossKind kind) {
  auto trace = forward_trace(model, batch);
  auto lg = loss_and_gradient(trace.output(), target, kind);
  LossAndGradients<Scalar> r;
  r.loss = lg.loss;
  r.grads = backward(model, trace, lg.output_grad);
  r.output = std::move(trace.activations.back());
  return r;
}

template <typename Scalar>
Tensor<Scalar> one_hot(const std::vector<int>& labels, int classes) {
  Tensor<Scalar> t(Shape{static_cast<Index>(labels.size()), classes});
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] >= classes) throw ShapeError("label out of range");
    t[static_cast<Index>(r) * classes + labels[r]] = Scalar(1);
  }
  return t;
}

template <typename Scalar>
std::vector<int> argmax_rows(const Tensor<Scalar>& t) {
  std::vector<int> out(static_cast<std::size_t>(t.rows()));
  auto m = t.matrix();
  for (Index r = 0; r < m.rows(); ++r) {
    Index best = 0;
    m.row(r).maxCoeff(&best);
    out[static_cast<std::size_t>(r)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace convens
