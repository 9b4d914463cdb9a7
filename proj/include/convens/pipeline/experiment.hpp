#pragma once

#include "convens/comms/comms.hpp"
#include "convens/data/partition.hpp"
#include "convens/edge/edge.hpp"
#include "convens/ensemble/ensemble.hpp"
#include "convens/ensemble/metrics.hpp"
#include "convens/imputation/fill.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace convens {

/// Every knob of one experiment. The JSON form is flat: one key per field,
/// named as below. Unknown keys are rejected.
struct ExperimentConfig {
  // Data source: "synthetic", "idx" or "csv" (regression).
  std::string data_source = "synthetic";
  Index train_samples = 5000;
  Index test_samples = 1000;
  int classes = 10;
  Shape features{32};
  double separation = 1.0;
  double noise = 1.0;
  std::string train_images, train_labels, test_images, test_labels;
  std::string csv_path, target_column;
  double test_fraction = 0.2;

  int edges = 20;
  Index embedding_width = 64;
  double alpha = 0.05;
  double delta = 0.0;

  int edge_epochs_min = 10;
  int edge_epochs_max = 49;
  Index edge_batch_size = 32;
  double edge_learning_rate = 1e-4;

  int vae_epochs = 50;
  Index vae_batch_size = 64;
  double vae_learning_rate = 1e-4;

  int ensemble_epochs = 100;
  Index ensemble_batch_size = 128;
  double ensemble_learning_rate = 1e-4;

  std::string scenario = "S1";
  int decode_epochs = 0;
  double link_bits_per_second = 450e6;
  double message_overhead_seconds = 0.0;

  std::string fill = "vae";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";
  int workers = 1;

  nlohmann::json to_json() const;
  /// Starts from the defaults and applies `j`; unknown keys and wrongly
  /// typed values raise ConfigError. The result is validated.
  static ExperimentConfig from_json(const nlohmann::json& j);
  void validate() const;

  Scenario scenario_kind() const { return parse_scenario(scenario); }
  FillPolicy fill_policy() const { return parse_fill_policy(fill); }
  ScenarioConfig scenario_config() const;
  EnsembleConfig ensemble_config(Task task, int outputs) const;
  PartitionSpec partition_spec() const;
};

/// Artifacts carry the hash of the config fields they depend on, so a later
/// stage detects when an upstream stage ran with different settings.
enum class Stage { Partition, Edges, Vaes, Ensemble };
std::uint64_t stage_hash(const ExperimentConfig& config, Stage stage);

struct ExperimentData {
  Dataset train;
  Dataset test;
  std::optional<DecileBinning> binning;

  Task task() const { return train.task; }
  /// Classes, or 1 for regression.
  int outputs() const { return train.task == Task::Classification ? train.num_classes : 1; }
};

ExperimentData load_experiment_data(const ExperimentConfig& config);

EdgeAssignment make_assignment(const ExperimentConfig& config, const ExperimentData& data);

EdgeModelConfig edge_config(const ExperimentConfig& config, const ExperimentData& data, int edge);

/// Trains edge i on its training slice and scores it on its test slice.
/// Up to config.workers edges train concurrently; results do not depend on it.
std::vector<EdgeArtifact> train_edges(const ExperimentConfig& config, const ExperimentData& data,
                                      const EdgeAssignment& assignment);

/// One VAE per edge on the embeddings of the edge's training slice.
std::vector<VaeModel<float>> train_vaes(const ExperimentConfig& config, const ExperimentData& data,
                                        const EdgeAssignment& assignment, std::span<const EdgeArtifact> edges);

struct ScenarioRun {
  EnsembleArtifact ensemble;
  ScenarioLedger ledger;
  MetricReport report;
  Predictions predictions;
  /// Voting baselines (classification only).
  std::optional<MetricReport> majority;
  std::optional<MetricReport> average;
  /// VAEs as used for test-time filling (streamed ones for S2/S3).
  std::vector<VaeModel<float>> vaes;
};

/// Trains the ensemble under the configured scenario and fill policy and
/// evaluates it on the test set. `vaes` are the offline VAEs used by S1;
/// S2 and S3 train their own from the streamed batches.
ScenarioRun run_scenario(const ExperimentConfig& config, const ExperimentData& data, const EdgeAssignment& assignment,
                         std::span<const EdgeArtifact> edges, std::span<const VaeModel<float>> vaes);

/// Test-set embedding matrix with gaps filled the way run_scenario does it.
EmbeddingMatrix test_matrix(const ExperimentConfig& config, const ExperimentData& data,
                            const EdgeAssignment& assignment, std::span<const EdgeArtifact> edges,
                            std::span<const VaeModel<float>> vaes);

/// Summary written as result.json; `report` consumes these.
nlohmann::json result_json(const ExperimentConfig& config, const EdgeAssignment& assignment,
                           std::span<const EdgeArtifact> edges, const ScenarioRun& run);

}  // namespace convens
