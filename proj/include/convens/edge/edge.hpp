#pragma once

#include "convens/data/dataset.hpp"
#include "convens/nn/train.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace convens {

/// Weak edge model: a sequential network whose last hidden dense layer
/// (width L_com, post-ReLU) provides the transferred embedding.
struct EdgeModelConfig {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  int epochs = 30;
  /// f_e, filters per conv layer (image template only).
  int filters = 1;
  Task task = Task::Classification;
  int outputs = 10;
  Index embedding_width = 64;
  double learning_rate = 1e-4;
  Index batch_size = 32;
  std::uint64_t seed = 0;

  /// Layers [0, embedding_stop()) produce the embedding.
  Index embedding_stop() const { return static_cast<Index>(layers.size()) - 1; }
  void validate() const;
  std::string describe() const;
};

struct EpochRange {
  int min = 10;
  int max = 49;
};

/// Draws an architecture from the template family. Rank-3 inputs get
/// conv(5x5, f_e) -> maxpool(2x2) -> conv(5x5, f_e) -> 1-2 dense -> output;
/// flat inputs get 1-2 dense -> output. f_e in {1, 2, 4}.
EdgeModelConfig random_edge_config(Task task, const Shape& input_shape, int classes, std::uint64_t seed,
                                   EpochRange epochs = {}, Index embedding_width = 64);

struct EdgeArtifact {
  EdgeModelConfig config;
  Model<float> model;
  std::vector<double> loss_trace;
  int epochs_run = 0;
  /// Accuracy for classification, RMSE for regression. NaN when not measured.
  double train_score = std::numeric_limits<double>::quiet_NaN();
  double test_score = std::numeric_limits<double>::quiet_NaN();

  Index parameter_count() const { return model.parameter_count(); }
};

/// SGD training on the samples in `indices` only.
EdgeArtifact train_edge(const EdgeModelConfig& config, const Dataset& train, const std::vector<Index>& indices);

/// (|indices|, L_com) embeddings in index order.
Tensor<float> extract_embeddings(const EdgeArtifact& edge, const Dataset& ds, const std::vector<Index>& indices);

/// Raw output-layer activations (logits or regression values).
Tensor<float> edge_outputs(const EdgeArtifact& edge, const Dataset& ds, const std::vector<Index>& indices);

/// Accuracy (classification) or RMSE (regression) on `indices`.
double edge_score(const EdgeArtifact& edge, const Dataset& ds, const std::vector<Index>& indices);

}  // namespace convens
