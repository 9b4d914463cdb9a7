#include "convens/ensemble/ensemble.hpp"

#include <algorithm>
#include <numeric>

namespace convens {

EnsembleConfig EnsembleConfig::standard(Index edges, Index width, Task task, int outputs) {
  EnsembleConfig c;
  c.edges = edges;
  c.width = width;
  c.kernel_h = std::max<Index>(1, edges / 2);
  c.kernel_w = std::max<Index>(1, width / 2);
  c.stride_h = std::max<Index>(1, edges / 4);
  c.stride_w = std::max<Index>(1, width / 4);
  c.task = task;
  c.outputs = task == Task::Classification ? outputs : 1;
  return c;
}

void EnsembleConfig::validate() const {
  if (edges < 1 || width < 1) throw ConfigError("ensemble: N and L_com must be >= 1");
  if (kernel_h < 1 || kernel_w < 1 || kernel_h > edges || kernel_w > width) {
    throw ConfigError("ensemble: kernel (" + std::to_string(kernel_h) + ", " + std::to_string(kernel_w) +
                      ") does not fit input (" + std::to_string(edges) + ", " + std::to_string(width) + ")");
  }
  if (stride_h < 1 || stride_w < 1) throw ConfigError("ensemble: stride must be >= 1");
  if (filters < 1 || hidden < 1) throw ConfigError("ensemble: filters and hidden width must be >= 1");
  if (epochs < 0 || batch_size < 1) throw ConfigError("ensemble: invalid epochs or batch size");
  if (!(learning_rate > 0.0)) throw ConfigError("ensemble: learning rate must be positive");
}

EmbeddingMatrix collect_received(std::span<const EdgeArtifact> edges, std::span<const std::vector<Index>> members,
                                 const Dataset& ds, const std::vector<Index>& samples) {
  if (edges.size() != members.size()) throw ConfigError("one membership list per edge required");
  if (edges.empty()) throw ConfigError("at least one edge required");
  const Index width = edges.front().config.embedding_width;
  const auto n_edges = static_cast<Index>(edges.size());
  auto m = EmbeddingMatrix::zeros(samples, n_edges, width);
  for (Index e = 0; e < n_edges; ++e) {
    const auto& edge = edges[static_cast<std::size_t>(e)];
    const auto& held = members[static_cast<std::size_t>(e)];
    std::vector<Index> rows, dataset_rows;
    for (std::size_t k = 0; k < samples.size(); ++k) {
      if (std::binary_search(held.begin(), held.end(), samples[k])) {
        rows.push_back(static_cast<Index>(k));
        dataset_rows.push_back(samples[k]);
      }
    }
    if (rows.empty()) continue;
    const auto emb = extract_embeddings(edge, ds, dataset_rows);
    if (emb.cols() != width) {
      throw ShapeError("edge " + std::to_string(e) + " embedding width " + std::to_string(emb.cols()) +
                       " != L_com " + std::to_string(width));
    }
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(emb.data() + static_cast<Index>(r) * width, width, m.slot(rows[r], e));
      m.mask[static_cast<std::size_t>(rows[r] * n_edges + e)] = 1;
    }
  }
  return m;
}

EmbeddingMatrix build_ensemble_dataset(std::span<const EdgeArtifact> edges, std::span<const VaeModel<float>> vaes,
                                       std::span<const std::vector<Index>> members, const Dataset& ds,
                                       const std::vector<Index>& samples, FillPolicy policy, std::uint64_t seed,
                                       const FillStatistics* stats) {
  if (policy == FillPolicy::Vae && vaes.size() != edges.size()) {
    throw ConfigError("ensemble dataset: |vaes| must equal |edges|");
  }
  auto m = collect_received(edges, members, ds, samples);
  fill_in_place(policy, m, vaes, seed, 0, stats);
  return m;
}

std::vector<std::vector<Index>> sample_stream(Index n, int epochs, Index batch, std::uint64_t seed) {
  std::vector<std::vector<Index>> out;
  if (n <= 0 || epochs <= 0) return out;
  if (batch < 1) throw ConfigError("stream batch size must be >= 1");
  std::vector<Index> current;
  current.reserve(static_cast<std::size_t>(batch));
  for (int e = 0; e < epochs; ++e) {
    for (Index k : epoch_permutation(n, seed, static_cast<std::uint64_t>(e))) {
      current.push_back(k);
      if (static_cast<Index>(current.size()) == batch) {
        out.push_back(std::move(current));
        current.clear();
        current.reserve(static_cast<std::size_t>(batch));
      }
    }
  }
  if (!current.empty()) out.push_back(std::move(current));
  return out;
}

Tensor<float> ensemble_targets(const Dataset& ds, const std::vector<Index>& samples) {
  return ds.target_tensor(samples);
}

EnsembleArtifact train_ensemble(const EmbeddingMatrix& matrix, const Tensor<float>& targets,
                                const EnsembleConfig& config) {
  matrix.validate();
  if (targets.rows() != matrix.samples()) throw ShapeError("ensemble: labels do not align with embedding matrix");
  if (matrix.edges() != config.edges || matrix.width() != config.width) {
    throw ShapeError("ensemble: matrix (" + std::to_string(matrix.edges()) + ", " + std::to_string(matrix.width()) +
                     ") does not match config");
  }
  EnsembleArtifact art;
  art.config = config;
  art.model = make_ensemble_model<float>(config);
  auto opt = OptimizerState<float>::adam(config.learning_rate);
  const LossKind loss = config.task == Task::Classification ? LossKind::CrossEntropy : LossKind::MSE;
  const Index n = matrix.samples();
  double acc = 0.0;
  Index rows = 0, consumed = 0;
  for (const auto& batch : sample_stream(n, config.epochs, config.batch_size, derive_seed(config.seed, "ensemble-stream"))) {
    double l = 0.0;
    try {
      l = train_step(art.model, opt, matrix.values.gather_rows(batch), targets.gather_rows(batch), loss);
    } catch (const NumericError& err) {
      throw NumericError("ensemble training diverged after " + std::to_string(art.loss_trace.size()) +
                         " epochs: " + err.what());
    }
    acc += l * static_cast<double>(batch.size());
    rows += static_cast<Index>(batch.size());
    consumed += static_cast<Index>(batch.size());
    // A chunk straddling an epoch boundary is booked to the epoch it closes.
    if (consumed >= n * static_cast<Index>(art.loss_trace.size() + 1)) {
      art.loss_trace.push_back(acc / static_cast<double>(rows));
      acc = 0.0;
      rows = 0;
    }
  }
  if (rows > 0) art.loss_trace.push_back(acc / static_cast<double>(rows));
  return art;
}

Predictions predict(const Model<float>& model, const EmbeddingMatrix& matrix, Task task) {
  Predictions p;
  p.task = task;
  const auto out = predict_batched(model, matrix.values);
  if (task == Task::Classification) {
    p.scores = softmax(out);
    p.classes = argmax_rows(out);
  } else {
    p.scores = out;
    p.values.assign(out.data(), out.data() + out.size());
  }
  return p;
}

VoteResult vote_baselines(std::span<const EdgeArtifact> edges, const Dataset& ds, const std::vector<Index>& indices,
                          std::span<const std::vector<Index>> members) {
  if (edges.empty()) throw ConfigError("voting needs at least one edge");
  if (!members.empty() && members.size() != edges.size()) throw ConfigError("voting: one membership list per edge");
  const auto n = static_cast<Index>(indices.size());
  const int classes = edges.front().config.outputs;
  RowMatrix<int> votes = RowMatrix<int>::Zero(n, classes), all_votes = RowMatrix<int>::Zero(n, classes);
  RowMatrix<double> prob = RowMatrix<double>::Zero(n, classes), all_prob = RowMatrix<double>::Zero(n, classes);
  std::vector<Index> voters(static_cast<std::size_t>(n), 0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& edge = edges[e];
    if (edge.config.task != Task::Classification) throw ConfigError("voting baselines need a classification task");
    const auto probs = softmax(edge_outputs(edge, ds, indices));
    const auto pred = argmax_rows(probs);
    const auto pm = probs.matrix();
    for (Index r = 0; r < n; ++r) {
      const auto k = indices[static_cast<std::size_t>(r)];
      const int c = pred[static_cast<std::size_t>(r)];
      ++all_votes(r, c);
      all_prob.row(r) += pm.row(r).cast<double>();
      if (!members.empty() && !std::binary_search(members[e].begin(), members[e].end(), k)) continue;
      ++votes(r, c);
      prob.row(r) += pm.row(r).cast<double>();
      ++voters[static_cast<std::size_t>(r)];
    }
  }
  VoteResult v;
  for (Index r = 0; r < n; ++r) {
    const bool none = voters[static_cast<std::size_t>(r)] == 0;
    const auto& vr = none ? all_votes : votes;
    const auto& pr = none ? all_prob : prob;
    Index best = 0;
    for (Index c = 1; c < classes; ++c) {
      if (vr(r, c) > vr(r, best)) best = c;
    }
    v.majority.push_back(static_cast<int>(best));
    pr.row(r).maxCoeff(&best);
    v.average.push_back(static_cast<int>(best));
  }
  return v;
}

}  // namespace convens
