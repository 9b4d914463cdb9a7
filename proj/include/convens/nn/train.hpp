#pragma once

#include "convens/nn/loss.hpp"
#include "convens/nn/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace convens {

struct TrainOptions {
  int epochs = 1;
  Index batch_size = 32;
  std::uint64_t seed = 0;
};

/// Seeded permutation of [0, n) for epoch `epoch`.
inline std::vector<Index> epoch_permutation(Index n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng = make_rng(derive_seed(seed, "epoch", epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// One optimizer step on a batch; returns the batch loss.
template <typename Scalar>
double train_step(Model<Scalar>& model, OptimizerState<Scalar>& opt, const Tensor<Scalar>& inputs,
                  const Tensor<Scalar>& targets, LossKind loss) {
  auto lg = backward(model, inputs, targets, loss);
  if (!std::isfinite(lg.loss)) throw NumericError("non-finite loss");
  optimizer_step(opt, model.parameters(), lg.grads.params);
  return lg.loss;
}

/// Mini-batch training with a seeded reshuffle each epoch. Returns the mean
/// training loss per epoch. Divergence raises NumericError naming the epoch.
template <typename Scalar>
std::vector<double> fit(Model<Scalar>& model, OptimizerState<Scalar>& opt, const Tensor<Scalar>& inputs,
                        const Tensor<Scalar>& targets, LossKind loss, const TrainOptions& options) {
  if (inputs.rows() != targets.rows()) throw ShapeError("fit: input/target row mismatch");
  const Index n = inputs.rows();
  std::vector<double> trace;
  if (n == 0) return trace;
  const Index bs = std::max<Index>(1, options.batch_size);
  for (int e = 0; e < options.epochs; ++e) {
    const auto order = epoch_permutation(n, options.seed, static_cast<std::uint64_t>(e));
    double total = 0.0;
    for (Index start = 0; start < n; start += bs) {
      const Index end = std::min(n, start + bs);
      std::vector<Index> idx(order.begin() + start, order.begin() + end);
      double l = 0.0;
      try {
        l = train_step(model, opt, inputs.gather_rows(idx), targets.gather_rows(idx), loss);
      } catch (const NumericError& err) {
        throw NumericError("training diverged at epoch " + std::to_string(e) + ": " + err.what());
      }
      total += l * static_cast<double>(end - start);
    }
    trace.push_back(total / static_cast<double>(n));
  }
  return trace;
}

/// Forward in chunks to bound memory.
template <typename Scalar>
Tensor<Scalar> predict_batched(const Model<Scalar>& model, const Tensor<Scalar>& inputs,
                               std::optional<Index> stop = std::nullopt, Index chunk = 512) {
  const Index n = inputs.rows();
  const Index end_layer = stop.value_or(model.layer_count());
  const Shape& per = end_layer == 0 ? model.input_shape() : model.output_shape(end_layer - 1);
  Tensor<Scalar> out(batch_shape<Scalar>(n, per));
  const Index width = shape_product(per);
  for (Index s = 0; s < n; s += chunk) {
    const Index e = std::min(n, s + chunk);
    auto part = forward(model, inputs.slice_rows(s, e), stop);
    out.values().segment(s * width, (e - s) * width) = part.values();
  }
  return out;
}

}  // namespace convens
