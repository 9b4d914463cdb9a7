#pragma once

#include "convens/data/dataset.hpp"
#include "convens/edge/edge.hpp"
#include "convens/ensemble/embedding_matrix.hpp"
#include "convens/imputation/fill.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace convens {

/// conv(filters, kernel, stride) -> relu -> dense(hidden) -> relu -> output.
struct EnsembleConfig {
  Index edges = 2;
  Index width = 64;
  Index filters = 64;
  Index kernel_h = 1;
  Index kernel_w = 32;
  Index stride_h = 1;
  Index stride_w = 16;
  Index hidden = 64;
  int epochs = 100;
  Index batch_size = 128;
  double learning_rate = 1e-4;
  Task task = Task::Classification;
  int outputs = 10;
  std::uint64_t seed = 0;

  /// Kernel (N/2, L/2) and stride (N/4, L/4), floored and clamped to >= 1.
  static EnsembleConfig standard(Index edges, Index width, Task task, int outputs);
  void validate() const;
};

template <typename Scalar>
Model<Scalar> make_ensemble_model(const EnsembleConfig& config) {
  config.validate();
  return Model<Scalar>(
      Shape{1, config.edges, config.width},
      {LayerSpec::conv2d(config.filters, config.kernel_h, config.kernel_w, config.stride_h, config.stride_w),
       LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(config.hidden), LayerSpec::relu(),
       LayerSpec::dense(config.task == Task::Classification ? config.outputs : 1)},
      derive_seed(config.seed, "ensemble-init"));
}

struct EnsembleArtifact {
  EnsembleConfig config;
  Model<float> model;
  std::vector<double> loss_trace;
};

/// Embeddings received from the edges: slot (k, i) is filled from edge i
/// when dataset index samples[k] is in members[i], and left zero and
/// mask-false otherwise.
EmbeddingMatrix collect_received(std::span<const EdgeArtifact> edges, std::span<const std::vector<Index>> members,
                                 const Dataset& ds, const std::vector<Index>& samples);

/// Received embeddings with the gaps filled per `policy`.
EmbeddingMatrix build_ensemble_dataset(std::span<const EdgeArtifact> edges, std::span<const VaeModel<float>> vaes,
                                       std::span<const std::vector<Index>> members, const Dataset& ds,
                                       const std::vector<Index>& samples, FillPolicy policy, std::uint64_t seed,
                                       const FillStatistics* stats = nullptr);

/// Batches over `epochs` concatenated seeded permutations of [0, n), cut
/// into chunks of `batch` rows; a chunk may straddle an epoch boundary and
/// only the last chunk may be short. ceil(n * epochs / batch) chunks.
std::vector<std::vector<Index>> sample_stream(Index n, int epochs, Index batch, std::uint64_t seed);

Tensor<float> ensemble_targets(const Dataset& ds, const std::vector<Index>& samples);

/// Adam training over the sample stream. Loss trace has one entry per n rows consumed.
EnsembleArtifact train_ensemble(const EmbeddingMatrix& matrix, const Tensor<float>& targets,
                                const EnsembleConfig& config);

struct Predictions {
  Task task = Task::Classification;
  std::vector<int> classes;
  std::vector<double> values;
  /// Softmax probabilities (classification) or raw outputs.
  Tensor<float> scores;
};

Predictions predict(const Model<float>& model, const EmbeddingMatrix& matrix, Task task);

struct VoteResult {
  std::vector<int> majority;
  std::vector<int> average;
};

/// Majority vote of per-edge argmax (ties to the lowest class) and argmax of
/// the mean per-edge softmax. With `members`, only edges holding a sample
/// vote on it; a sample no edge holds falls back to all edges.
VoteResult vote_baselines(std::span<const EdgeArtifact> edges, const Dataset& ds, const std::vector<Index>& indices,
                          std::span<const std::vector<Index>> members = {});

}  // namespace convens
