#include "convens/edge/edge.hpp"

#include <cmath>
#include <random>
#include <sstream>

namespace convens {

void EdgeModelConfig::validate() const {
  const auto n = layers.size();
  if (n < 3 || layers[n - 1].kind != LayerKind::Dense || layers[n - 2].kind != LayerKind::Activation ||
      layers[n - 3].kind != LayerKind::Dense) {
    throw ConfigError("edge model must end with dense(L_com) -> activation -> dense(output)");
  }
  if (layers[n - 3].units != embedding_width) {
    throw ConfigError("edge penultimate dense width " + std::to_string(layers[n - 3].units) +
                      " != L_com " + std::to_string(embedding_width));
  }
  const Index expected_out = task == Task::Classification ? outputs : 1;
  if (layers[n - 1].units != expected_out) {
    throw ConfigError("edge output width " + std::to_string(layers[n - 1].units) + " != " +
                      std::to_string(expected_out));
  }
  if (epochs < 0) throw ConfigError("edge epochs must be >= 0");
  if (!(learning_rate > 0.0)) throw ConfigError("edge learning rate must be positive");
}

std::string EdgeModelConfig::describe() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::Activation || layers[i].kind == LayerKind::Flatten) continue;
    if (os.tellp() > 0) os << " -> ";
    os << convens::describe(layers[i]);
  }
  return os.str();
}

EdgeModelConfig random_edge_config(Task task, const Shape& input_shape, int classes, std::uint64_t seed,
                                   EpochRange epochs, Index embedding_width) {
  if (epochs.min < 0 || epochs.max < epochs.min) throw ConfigError("invalid edge epoch range");
  Rng rng = make_rng(derive_seed(seed, "edge-config"));
  constexpr int kFilterChoices[] = {1, 2, 4};
  EdgeModelConfig cfg;
  cfg.input_shape = input_shape;
  cfg.task = task;
  cfg.outputs = task == Task::Classification ? classes : 1;
  cfg.embedding_width = embedding_width;
  cfg.seed = seed;
  cfg.filters = kFilterChoices[std::uniform_int_distribution<int>(0, 2)(rng)];
  cfg.epochs = std::uniform_int_distribution<int>(epochs.min, epochs.max)(rng);
  const bool two_dense = std::uniform_int_distribution<int>(0, 1)(rng) == 1;

  if (input_shape.size() == 3) {
    cfg.layers = {LayerSpec::conv2d(cfg.filters, 5, 5), LayerSpec::relu(), LayerSpec::maxpool2d(2, 2),
                  LayerSpec::conv2d(cfg.filters, 5, 5), LayerSpec::relu(), LayerSpec::flatten()};
  } else {
    cfg.filters = 0;
  }
  if (two_dense) {
    cfg.layers.push_back(LayerSpec::dense(64));
    cfg.layers.push_back(LayerSpec::relu());
  }
  cfg.layers.push_back(LayerSpec::dense(embedding_width));
  cfg.layers.push_back(LayerSpec::relu());
  cfg.layers.push_back(LayerSpec::dense(cfg.outputs));
  return cfg;
}

EdgeArtifact train_edge(const EdgeModelConfig& config, const Dataset& train, const std::vector<Index>& indices) {
  config.validate();
  if (indices.empty()) throw ConfigError("edge training: empty assignment");
  if (train.sample_shape() != config.input_shape) {
    throw ShapeError("edge training: dataset sample shape " + shape_string(train.sample_shape()) +
                     " does not match model input " + shape_string(config.input_shape));
  }
  EdgeArtifact art;
  art.config = config;
  art.model = Model<float>(config.input_shape, config.layers, derive_seed(config.seed, "edge-init"));
  auto opt = OptimizerState<float>::sgd(config.learning_rate);
  const auto inputs = train.inputs.gather_rows(indices);
  const auto targets = train.target_tensor(indices);
  const LossKind loss = config.task == Task::Classification ? LossKind::CrossEntropy : LossKind::MSE;
  try {
    art.loss_trace = fit(art.model, opt, inputs, targets, loss,
                         TrainOptions{config.epochs, config.batch_size, derive_seed(config.seed, "edge-shuffle")});
  } catch (const NumericError& err) {
    throw NumericError(std::string("edge training failed: ") + err.what());
  }
  art.epochs_run = config.epochs;
  art.train_score = edge_score(art, train, indices);
  return art;
}

Tensor<float> extract_embeddings(const EdgeArtifact& edge, const Dataset& ds, const std::vector<Index>& indices) {
  return predict_batched(edge.model, ds.inputs.gather_rows(indices), edge.config.embedding_stop());
}

Tensor<float> edge_outputs(const EdgeArtifact& edge, const Dataset& ds, const std::vector<Index>& indices) {
  return predict_batched(edge.model, ds.inputs.gather_rows(indices));
}

double edge_score(const EdgeArtifact& edge, const Dataset& ds, const std::vector<Index>& indices) {
  if (indices.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto out = edge_outputs(edge, ds, indices);
  if (edge.config.task == Task::Classification) {
    const auto pred = argmax_rows(out);
    Index hits = 0;
    for (std::size_t r = 0; r < indices.size(); ++r) {
      hits += pred[r] == ds.labels[static_cast<std::size_t>(indices[r])];
    }
    return static_cast<double>(hits) / static_cast<double>(indices.size());
  }
  double sq = 0.0;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const double d = out[static_cast<Index>(r)] - ds.targets[static_cast<std::size_t>(indices[r])];
    sq += d * d;
  }
  return std::sqrt(sq / static_cast<double>(indices.size()));
}

}  // namespace convens
