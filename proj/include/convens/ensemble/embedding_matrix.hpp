#pragma once

#include "convens/nn/tensor.hpp"

#include <cstdint>
#include <vector>

namespace convens {

/// Per-sample stack of edge embeddings, shaped (samples, 1, N, L_com) so it
/// feeds the ensemble convolution directly. mask[k * N + i] is 1 when slot
/// (k, i) came from edge i rather than from imputation.
struct EmbeddingMatrix {
  Tensor<float> values;
  std::vector<std::uint8_t> mask;
  /// Dataset index of each row.
  std::vector<Index> sample_index;

  static EmbeddingMatrix zeros(std::vector<Index> samples, Index edges, Index width) {
    EmbeddingMatrix m;
    const auto n = static_cast<Index>(samples.size());
    m.values = Tensor<float>(Shape{n, 1, edges, width});
    m.mask.assign(static_cast<std::size_t>(n * edges), 0);
    m.sample_index = std::move(samples);
    return m;
  }

  Index samples() const { return values.rank() == 4 ? values.dim(0) : 0; }
  Index edges() const { return values.rank() == 4 ? values.dim(2) : 0; }
  Index width() const { return values.rank() == 4 ? values.dim(3) : 0; }

  bool available(Index k, Index edge) const { return mask[static_cast<std::size_t>(k * edges() + edge)] != 0; }
  Index available_count() const {
    Index n = 0;
    for (auto m : mask) n += m;
    return n;
  }

  float* slot(Index k, Index edge) { return values.data() + (k * edges() + edge) * width(); }
  const float* slot(Index k, Index edge) const { return values.data() + (k * edges() + edge) * width(); }

  void validate() const {
    if (values.rank() != 4 || values.dim(1) != 1) throw ShapeError("embedding matrix must be (n, 1, N, L)");
    if (static_cast<Index>(mask.size()) != samples() * edges()) throw ShapeError("embedding mask size mismatch");
    if (static_cast<Index>(sample_index.size()) != samples()) throw ShapeError("embedding sample map size mismatch");
  }

  /// Rows `rows` (positions within this matrix, not dataset indices).
  EmbeddingMatrix rows(const std::vector<Index>& rows) const {
    EmbeddingMatrix m;
    m.values = values.gather_rows(rows);
    const Index n_edges = edges();
    for (Index r : rows) {
      m.sample_index.push_back(sample_index[static_cast<std::size_t>(r)]);
      for (Index e = 0; e < n_edges; ++e) m.mask.push_back(mask[static_cast<std::size_t>(r * n_edges + e)]);
    }
    return m;
  }
};

}  // namespace convens
