#pragma once

#include "convens/nn/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <vector>

namespace convens {

enum class OptimizerKind { SGD, Adam };

template <typename Scalar>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<Tensor<Scalar>> first_moment;
  std::vector<Tensor<Scalar>> second_moment;
  std::uint64_t step = 0;

  static OptimizerState sgd(double lr) {
    OptimizerState s;
    s.learning_rate = lr;
    return s;
  }
  static OptimizerState adam(double lr) {
    OptimizerState s;
    s.kind = OptimizerKind::Adam;
    s.learning_rate = lr;
    return s;
  }
};

/// In-place update. SGD: p -= lr*g. Adam: bias-corrected first/second moments.
template <typename Scalar>
void optimizer_step(OptimizerState<Scalar>& state, std::vector<Tensor<Scalar>>& params,
                    const std::vector<Tensor<Scalar>>& grads) {
  if (params.size() != grads.size()) throw ShapeError("optimizer: parameter/gradient count mismatch");
  if (!(state.learning_rate > 0.0)) throw ConfigError("optimizer: learning rate must be positive");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape()) {
      throw ShapeError("optimizer: gradient " + std::to_string(i) + " shape mismatch");
    }
    if (!grads[i].all_finite()) throw NumericError("optimizer: non-finite gradient");
  }
  ++state.step;
  const auto lr = static_cast<Scalar>(state.learning_rate);
  if (state.kind == OptimizerKind::SGD) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].values() -= lr * grads[i].values();
    return;
  }
  if (state.first_moment.size() != params.size()) {
    state.first_moment.clear();
    state.second_moment.clear();
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.shape());
      state.second_moment.emplace_back(p.shape());
    }
  }
  const auto b1 = static_cast<Scalar>(state.beta1);
  const auto b2 = static_cast<Scalar>(state.beta2);
  const auto t = static_cast<double>(state.step);
  const auto c1 = static_cast<Scalar>(1.0 - std::pow(state.beta1, t));
  const auto c2 = static_cast<Scalar>(1.0 - std::pow(state.beta2, t));
  const auto eps = static_cast<Scalar>(state.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& m = state.first_moment[i].values();
    auto& v = state.second_moment[i].values();
    const auto& g = grads[i].values();
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    params[i].values().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
}

}  // namespace convens
