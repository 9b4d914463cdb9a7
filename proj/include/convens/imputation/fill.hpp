#pragma once

#include "convens/ensemble/embedding_matrix.hpp"
#include "convens/imputation/vae.hpp"

#include <span>
#include <string>

namespace convens {

enum class FillPolicy { Vae, Zero, Mean, Max };

std::string to_string(FillPolicy policy);
FillPolicy parse_fill_policy(const std::string& name);

/// Latent draw for missing slot (edge, sample); fixed by (seed, edge, sample).
RowMatrix<float> slot_latent(std::uint64_t seed, Index edge, Index sample, Index latent, std::uint64_t visit = 0);

/// Per-edge coordinatewise statistic (mean or max) over received vectors.
struct FillStatistics {
  FillPolicy policy = FillPolicy::Zero;
  std::vector<Vector<float>> per_edge;
};

/// Throws when an edge has no received vector to take statistics over.
FillStatistics fill_statistics(FillPolicy policy, const EmbeddingMatrix& received);

/// Fills every mask-false slot per `policy`; mask-true slots are untouched.
/// VAE fill uses `vaes[i]` for edge i. Mean/Max use `stats` when given,
/// otherwise statistics of the matrix's own received vectors.
void fill_in_place(FillPolicy policy, EmbeddingMatrix& matrix, std::span<const VaeModel<float>> vaes,
                   std::uint64_t seed, std::uint64_t visit = 0, const FillStatistics* stats = nullptr);

EmbeddingMatrix fill(FillPolicy policy, const EmbeddingMatrix& received, std::span<const VaeModel<float>> vaes,
                     std::uint64_t seed);

}  // namespace convens
