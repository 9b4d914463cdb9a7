#include "convens/imputation/fill.hpp"

#include <algorithm>
#include <limits>

namespace convens {

std::string to_string(FillPolicy policy) {
  switch (policy) {
    case FillPolicy::Vae: return "vae";
    case FillPolicy::Zero: return "zero";
    case FillPolicy::Mean: return "mean";
    case FillPolicy::Max: return "max";
  }
  return "unknown";
}

FillPolicy parse_fill_policy(const std::string& name) {
  for (auto p : {FillPolicy::Vae, FillPolicy::Zero, FillPolicy::Mean, FillPolicy::Max}) {
    if (to_string(p) == name) return p;
  }
  throw ConfigError("unknown fill policy '" + name + "' (expected vae, zero, mean or max)");
}

RowMatrix<float> slot_latent(std::uint64_t seed, Index edge, Index sample, Index latent, std::uint64_t visit) {
  Rng rng = make_rng(derive_seed(derive_seed(derive_seed(seed, "fill-edge", static_cast<std::uint64_t>(edge)),
                                             "fill-sample", static_cast<std::uint64_t>(sample)),
                                 "fill-visit", visit));
  return standard_normal<float>(1, latent, rng);
}

FillStatistics fill_statistics(FillPolicy policy, const EmbeddingMatrix& received) {
  FillStatistics stats;
  stats.policy = policy;
  if (policy != FillPolicy::Mean && policy != FillPolicy::Max) return stats;
  const Index n = received.samples(), edges = received.edges(), width = received.width();
  for (Index e = 0; e < edges; ++e) {
    Vector<float> acc = policy == FillPolicy::Mean ? Vector<float>::Zero(width)
                                                   : Vector<float>::Constant(width, -std::numeric_limits<float>::infinity());
    Vector<double> sum = Vector<double>::Zero(width);
    Index count = 0;
    for (Index k = 0; k < n; ++k) {
      if (!received.available(k, e)) continue;
      Eigen::Map<const Vector<float>> v(received.slot(k, e), width);
      if (policy == FillPolicy::Mean) {
        sum += v.cast<double>();
      } else {
        acc = acc.cwiseMax(v);
      }
      ++count;
    }
    if (count == 0) {
      throw ConfigError(to_string(policy) + " fill: edge " + std::to_string(e) + " has no received vectors");
    }
    if (policy == FillPolicy::Mean) acc = (sum / static_cast<double>(count)).cast<float>();
    stats.per_edge.push_back(std::move(acc));
  }
  return stats;
}

void fill_in_place(FillPolicy policy, EmbeddingMatrix& matrix, std::span<const VaeModel<float>> vaes,
                   std::uint64_t seed, std::uint64_t visit, const FillStatistics* stats) {
  matrix.validate();
  const Index n = matrix.samples(), edges = matrix.edges(), width = matrix.width();
  if (policy == FillPolicy::Vae && static_cast<Index>(vaes.size()) != edges) {
    throw ConfigError("vae fill needs one VAE per edge (" + std::to_string(edges) + "), got " +
                      std::to_string(vaes.size()));
  }
  FillStatistics own;
  if ((policy == FillPolicy::Mean || policy == FillPolicy::Max) && stats == nullptr) {
    own = fill_statistics(policy, matrix);
    stats = &own;
  }
  for (Index e = 0; e < edges; ++e) {
    std::vector<Index> missing;
    for (Index k = 0; k < n; ++k) {
      if (!matrix.available(k, e)) missing.push_back(k);
    }
    if (missing.empty()) continue;
    switch (policy) {
      case FillPolicy::Zero:
        for (Index k : missing) std::fill_n(matrix.slot(k, e), width, 0.0f);
        break;
      case FillPolicy::Mean:
      case FillPolicy::Max: {
        const auto& v = stats->per_edge.at(static_cast<std::size_t>(e));
        for (Index k : missing) std::copy_n(v.data(), width, matrix.slot(k, e));
        break;
      }
      case FillPolicy::Vae: {
        const auto& vae = vaes[static_cast<std::size_t>(e)];
        if (vae.width != width) throw ShapeError("vae output width does not match embedding width");
        RowMatrix<float> z(static_cast<Index>(missing.size()), vae.latent);
        for (std::size_t r = 0; r < missing.size(); ++r) {
          z.row(static_cast<Index>(r)) =
              slot_latent(seed, e, matrix.sample_index[static_cast<std::size_t>(missing[r])], vae.latent, visit);
        }
        const auto generated = decode(vae, z);
        for (std::size_t r = 0; r < missing.size(); ++r) {
          std::copy_n(generated.data() + static_cast<Index>(r) * width, width, matrix.slot(missing[r], e));
        }
        break;
      }
    }
  }
}

EmbeddingMatrix fill(FillPolicy policy, const EmbeddingMatrix& received, std::span<const VaeModel<float>> vaes,
                     std::uint64_t seed) {
  EmbeddingMatrix out = received;
  fill_in_place(policy, out, vaes, seed);
  return out;
}

}  // namespace convens
