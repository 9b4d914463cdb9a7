#include "convens/pipeline/experiment.hpp"

#include "convens/io/serialize.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <numeric>
#include <thread>

namespace convens {

using nlohmann::json;

json ExperimentConfig::to_json() const {
  return json{{"data_source", data_source},
              {"train_samples", train_samples},
              {"test_samples", test_samples},
              {"classes", classes},
              {"features", features},
              {"separation", separation},
              {"noise", noise},
              {"train_images", train_images},
              {"train_labels", train_labels},
              {"test_images", test_images},
              {"test_labels", test_labels},
              {"csv_path", csv_path},
              {"target_column", target_column},
              {"test_fraction", test_fraction},
              {"edges", edges},
              {"embedding_width", embedding_width},
              {"alpha", alpha},
              {"delta", delta},
              {"edge_epochs_min", edge_epochs_min},
              {"edge_epochs_max", edge_epochs_max},
              {"edge_batch_size", edge_batch_size},
              {"edge_learning_rate", edge_learning_rate},
              {"vae_epochs", vae_epochs},
              {"vae_batch_size", vae_batch_size},
              {"vae_learning_rate", vae_learning_rate},
              {"ensemble_epochs", ensemble_epochs},
              {"ensemble_batch_size", ensemble_batch_size},
              {"ensemble_learning_rate", ensemble_learning_rate},
              {"scenario", scenario},
              {"decode_epochs", decode_epochs},
              {"link_bits_per_second", link_bits_per_second},
              {"message_overhead_seconds", message_overhead_seconds},
              {"fill", fill},
              {"seed", seed},
              {"output_dir", output_dir},
              {"workers", workers}};
}

namespace {

bool compatible(const json& base, const json& v) {
  if (base.is_string()) return v.is_string();
  if (base.is_array()) return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_integer(); });
  if (base.is_number_float()) return v.is_number();
  if (base.is_number_unsigned()) return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
  if (base.is_number_integer()) return v.is_number_integer();
  return false;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  json merged = ExperimentConfig{}.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!merged.contains(key)) throw ConfigError("unknown config key '" + key + "'");
    if (!compatible(merged[key], value)) {
      throw ConfigError("config key '" + key + "' expects a " + std::string(merged[key].type_name()) + ", got " +
                        value.dump());
    }
    merged[key] = value;
  }
  ExperimentConfig c;
  c.data_source = merged["data_source"].get<std::string>();
  c.train_samples = merged["train_samples"].get<Index>();
  c.test_samples = merged["test_samples"].get<Index>();
  c.classes = merged["classes"].get<int>();
  c.features = merged["features"].get<Shape>();
  c.separation = merged["separation"].get<double>();
  c.noise = merged["noise"].get<double>();
  c.train_images = merged["train_images"].get<std::string>();
  c.train_labels = merged["train_labels"].get<std::string>();
  c.test_images = merged["test_images"].get<std::string>();
  c.test_labels = merged["test_labels"].get<std::string>();
  c.csv_path = merged["csv_path"].get<std::string>();
  c.target_column = merged["target_column"].get<std::string>();
  c.test_fraction = merged["test_fraction"].get<double>();
  c.edges = merged["edges"].get<int>();
  c.embedding_width = merged["embedding_width"].get<Index>();
  c.alpha = merged["alpha"].get<double>();
  c.delta = merged["delta"].get<double>();
  c.edge_epochs_min = merged["edge_epochs_min"].get<int>();
  c.edge_epochs_max = merged["edge_epochs_max"].get<int>();
  c.edge_batch_size = merged["edge_batch_size"].get<Index>();
  c.edge_learning_rate = merged["edge_learning_rate"].get<double>();
  c.vae_epochs = merged["vae_epochs"].get<int>();
  c.vae_batch_size = merged["vae_batch_size"].get<Index>();
  c.vae_learning_rate = merged["vae_learning_rate"].get<double>();
  c.ensemble_epochs = merged["ensemble_epochs"].get<int>();
  c.ensemble_batch_size = merged["ensemble_batch_size"].get<Index>();
  c.ensemble_learning_rate = merged["ensemble_learning_rate"].get<double>();
  c.scenario = merged["scenario"].get<std::string>();
  c.decode_epochs = merged["decode_epochs"].get<int>();
  c.link_bits_per_second = merged["link_bits_per_second"].get<double>();
  c.message_overhead_seconds = merged["message_overhead_seconds"].get<double>();
  c.fill = merged["fill"].get<std::string>();
  c.seed = merged["seed"].get<std::uint64_t>();
  c.output_dir = merged["output_dir"].get<std::string>();
  c.workers = merged["workers"].get<int>();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (data_source == "synthetic") {
    if (train_samples < 1 || test_samples < 1) throw ConfigError("synthetic data needs train and test samples >= 1");
    if (classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (features.empty() || std::any_of(features.begin(), features.end(), [](Index d) { return d < 1; })) {
      throw ConfigError("features must be a nonempty list of positive extents");
    }
    if (features.size() != 1 && features.size() != 3) throw ConfigError("features must be [d] or [c, h, w]");
    if (!(separation > 0.0) || !(noise > 0.0)) throw ConfigError("separation and noise must be positive");
  } else if (data_source == "idx") {
    if (train_images.empty() || train_labels.empty() || test_images.empty() || test_labels.empty()) {
      throw ConfigError("idx data needs train_images, train_labels, test_images and test_labels");
    }
  } else if (data_source == "csv") {
    if (csv_path.empty() || target_column.empty()) throw ConfigError("csv data needs csv_path and target_column");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
  } else {
    throw ConfigError("data_source must be synthetic, idx or csv (got '" + data_source + "')");
  }
  if (edges < 1) throw ConfigError("edges must be >= 1");
  if (embedding_width < 1) throw ConfigError("embedding_width must be >= 1");
  partition_spec().validate();
  if (edge_epochs_min < 0 || edge_epochs_max < edge_epochs_min) {
    throw ConfigError("edge epoch range [" + std::to_string(edge_epochs_min) + ", " + std::to_string(edge_epochs_max) +
                      "] is empty");
  }
  if (edge_batch_size < 1 || vae_batch_size < 1 || ensemble_batch_size < 1) throw ConfigError("batch sizes must be >= 1");
  if (!(edge_learning_rate > 0.0) || !(vae_learning_rate > 0.0) || !(ensemble_learning_rate > 0.0)) {
    throw ConfigError("learning rates must be positive");
  }
  if (vae_epochs < 0 || ensemble_epochs < 1) throw ConfigError("vae_epochs must be >= 0 and ensemble_epochs >= 1");
  scenario_config().validate();
  (void)fill_policy();
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

ScenarioConfig ExperimentConfig::scenario_config() const {
  ScenarioConfig s;
  s.scenario = parse_scenario(scenario);
  s.epochs = ensemble_epochs;
  s.decode_epochs = decode_epochs;
  s.batch_size = ensemble_batch_size;
  s.width = embedding_width;
  s.link_bits_per_second = link_bits_per_second;
  s.message_overhead_seconds = message_overhead_seconds;
  return s;
}

EnsembleConfig ExperimentConfig::ensemble_config(Task task, int outputs) const {
  auto c = EnsembleConfig::standard(edges, embedding_width, task, outputs);
  c.epochs = ensemble_epochs;
  c.batch_size = ensemble_batch_size;
  c.learning_rate = ensemble_learning_rate;
  c.seed = derive_seed(seed, "ensemble");
  return c;
}

PartitionSpec ExperimentConfig::partition_spec() const {
  PartitionSpec p;
  p.alpha = alpha;
  p.delta = delta;
  p.edges = edges;
  p.seed = derive_seed(seed, "partition");
  return p;
}

std::uint64_t stage_hash(const ExperimentConfig& config, Stage stage) {
  static const std::vector<std::string> data_keys = {
      "data_source", "train_samples", "test_samples", "classes",     "features",      "separation", "noise",
      "train_images", "train_labels", "test_images",  "test_labels", "csv_path",      "target_column",
      "test_fraction", "seed"};
  static const std::vector<std::string> partition_keys = {"edges", "alpha", "delta"};
  static const std::vector<std::string> edge_keys = {"embedding_width", "edge_epochs_min", "edge_epochs_max",
                                                     "edge_batch_size", "edge_learning_rate"};
  static const std::vector<std::string> vae_keys = {"vae_epochs", "vae_batch_size", "vae_learning_rate"};
  const json all = config.to_json();
  json picked = json::object();
  const auto take = [&](const std::vector<std::string>& keys) {
    for (const auto& k : keys) picked[k] = all[k];
  };
  take(data_keys);
  take(partition_keys);
  if (stage == Stage::Partition) return config_hash(picked);
  take(edge_keys);
  if (stage == Stage::Edges) return config_hash(picked);
  take(vae_keys);
  if (stage == Stage::Vaes) return config_hash(picked);
  picked = all;
  picked.erase("output_dir");
  picked.erase("workers");
  return config_hash(picked);
}

ExperimentData load_experiment_data(const ExperimentConfig& config) {
  config.validate();
  ExperimentData d;
  if (config.data_source == "synthetic") {
    SyntheticSpec s;
    s.samples = config.train_samples;
    s.classes = config.classes;
    s.sample_shape = config.features;
    s.separation = config.separation;
    s.noise = config.noise;
    s.seed = derive_seed(config.seed, "data");
    std::tie(d.train, d.test) = make_synthetic_split(s, config.test_samples);
  } else if (config.data_source == "idx") {
    d.train = load_idx(config.train_images, config.train_labels, Split::Train);
    d.test = load_idx(config.test_images, config.test_labels, Split::Test);
  } else {
    const auto all = load_csv_regression(config.csv_path, config.target_column);
    std::tie(d.train, d.test) = split_dataset(all, config.test_fraction, derive_seed(config.seed, "split"));
    d.binning = bin_regression_targets(d.train, d.test);
  }
  return d;
}

EdgeAssignment make_assignment(const ExperimentConfig& config, const ExperimentData& data) {
  return sample_edge_assignment(data.train, data.test, config.partition_spec());
}

EdgeModelConfig edge_config(const ExperimentConfig& config, const ExperimentData& data, int edge) {
  auto c = random_edge_config(data.task(), data.train.sample_shape(), data.outputs(),
                              derive_seed(config.seed, "edge", static_cast<std::uint64_t>(edge)),
                              {config.edge_epochs_min, config.edge_epochs_max}, config.embedding_width);
  c.batch_size = config.edge_batch_size;
  c.learning_rate = config.edge_learning_rate;
  return c;
}

std::vector<EdgeArtifact> train_edges(const ExperimentConfig& config, const ExperimentData& data,
                                      const EdgeAssignment& assignment) {
  const auto n = assignment.edges.size();
  std::vector<EdgeArtifact> out(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t e = next++; e < n; e = next++) {
      try {
        const auto& split = assignment.edges[e];
        auto art = train_edge(edge_config(config, data, static_cast<int>(e)), data.train, split.train);
        if (!split.test.empty()) art.test_score = edge_score(art, data.test, split.test);
        out[e] = std::move(art);
      } catch (...) {
        errors[e] = std::current_exception();
      }
    }
  };
  const auto threads = static_cast<std::size_t>(std::max(1, config.workers));
  if (threads == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, n); ++t) pool.emplace_back(work);
  }
  for (std::size_t e = 0; e < n; ++e) {
    if (!errors[e]) continue;
    try {
      std::rethrow_exception(errors[e]);
    } catch (const NumericError& err) {
      throw NumericError("edge " + std::to_string(e) + ": " + err.what());
    }
  }
  return out;
}

std::vector<VaeModel<float>> train_vaes(const ExperimentConfig& config, const ExperimentData& data,
                                        const EdgeAssignment& assignment, std::span<const EdgeArtifact> edges) {
  if (edges.size() != assignment.edges.size()) throw ConfigError("train_vaes: one edge per assignment slice needed");
  VaeTrainOptions opt;
  opt.epochs = config.vae_epochs;
  opt.batch_size = config.vae_batch_size;
  opt.learning_rate = config.vae_learning_rate;
  std::vector<VaeModel<float>> out;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto emb = extract_embeddings(edges[e], data.train, assignment.edges[e].train);
    out.push_back(train_vae(emb, derive_seed(config.seed, "vae", e), opt));
  }
  return out;
}

namespace {

std::vector<Index> iota_indices(Index n) {
  std::vector<Index> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), Index{0});
  return v;
}

std::vector<std::vector<Index>> train_members(const EdgeAssignment& a) {
  std::vector<std::vector<Index>> m;
  for (const auto& e : a.edges) m.push_back(e.train);
  return m;
}

std::vector<std::vector<Index>> test_members(const EdgeAssignment& a) {
  std::vector<std::vector<Index>> m;
  for (const auto& e : a.edges) m.push_back(e.test);
  return m;
}

bool uses_statistics(FillPolicy p) { return p == FillPolicy::Mean || p == FillPolicy::Max; }

EmbeddingMatrix filled_test_matrix(const ExperimentConfig& config, const ExperimentData& data,
                                   const EdgeAssignment& assignment, std::span<const EdgeArtifact> edges,
                                   std::span<const VaeModel<float>> vaes, const FillStatistics* stats) {
  const auto members = test_members(assignment);
  auto m = collect_received(edges, members, data.test, iota_indices(data.test.size()));
  fill_in_place(config.fill_policy(), m, vaes, derive_seed(config.seed, "fill-test"), 0, stats);
  return m;
}

/// Running per-edge mean or max of the vectors the server has received.
class RunningStatistics {
 public:
  RunningStatistics(FillPolicy policy, Index edges, Index width)
      : policy_(policy), sum_(static_cast<std::size_t>(edges), Vector<double>::Zero(width)),
        max_(static_cast<std::size_t>(edges), Vector<float>::Constant(width, -std::numeric_limits<float>::infinity())),
        count_(static_cast<std::size_t>(edges), 0) {}

  void add(Index edge, const float* v, Index width) {
    Eigen::Map<const Vector<float>> x(v, width);
    const auto e = static_cast<std::size_t>(edge);
    sum_[e] += x.cast<double>();
    max_[e] = max_[e].cwiseMax(x);
    ++count_[e];
  }

  /// Edges with nothing received yet contribute zeros.
  FillStatistics snapshot() const {
    FillStatistics s;
    s.policy = policy_;
    for (std::size_t e = 0; e < sum_.size(); ++e) {
      if (count_[e] == 0) {
        s.per_edge.push_back(Vector<float>::Zero(sum_[e].size()));
      } else if (policy_ == FillPolicy::Mean) {
        s.per_edge.push_back((sum_[e] / static_cast<double>(count_[e])).cast<float>());
      } else {
        s.per_edge.push_back(max_[e]);
      }
    }
    return s;
  }

 private:
  FillPolicy policy_;
  std::vector<Vector<double>> sum_;
  std::vector<Vector<float>> max_;
  std::vector<Index> count_;
};

/// S2 and S3: the server sees one mini-batch per communication, trains the
/// VAEs one step on it, fills its gaps, then takes `reuse` ensemble steps.
EnsembleArtifact train_streaming(const ExperimentConfig& config, const ExperimentData& data,
                                 const EnsembleConfig& ens_cfg, const EmbeddingMatrix& received,
                                 const TransferSchedule& schedule, std::vector<VaeModel<float>>& vaes) {
  const FillPolicy policy = config.fill_policy();
  const Index n_edges = received.edges(), width = received.width();
  vaes.clear();
  for (Index e = 0; e < n_edges; ++e) {
    vaes.push_back(VaeModel<float>::create(width, derive_seed(config.seed, "vae", static_cast<std::uint64_t>(e))));
  }
  std::vector<VaeTrainer<float>> trainers;
  for (Index e = 0; e < n_edges; ++e) {
    trainers.emplace_back(vaes[static_cast<std::size_t>(e)], config.vae_learning_rate,
                          derive_seed(config.seed, "vae", static_cast<std::uint64_t>(e)));
  }
  RunningStatistics running(policy, n_edges, width);

  EnsembleArtifact art;
  art.config = ens_cfg;
  art.model = make_ensemble_model<float>(ens_cfg);
  auto opt = OptimizerState<float>::adam(ens_cfg.learning_rate);
  const LossKind loss = ens_cfg.task == Task::Classification ? LossKind::CrossEntropy : LossKind::MSE;
  const int reuse = schedule.config.reuse();
  const Index n = received.samples();
  const std::uint64_t fill_seed = derive_seed(config.seed, "fill");
  double acc = 0.0;
  Index rows_seen = 0;

  for (const auto& comm : schedule.communications) {
    auto batch = received.rows(comm.samples);
    for (Index e = 0; e < n_edges; ++e) {
      std::vector<Index> got;
      for (Index r = 0; r < batch.samples(); ++r) {
        if (batch.available(r, e)) got.push_back(r);
      }
      if (got.empty()) continue;
      Tensor<float> rows(Shape{static_cast<Index>(got.size()), width});
      for (std::size_t r = 0; r < got.size(); ++r) {
        std::copy_n(batch.slot(got[r], e), width, rows.data() + static_cast<Index>(r) * width);
        running.add(e, batch.slot(got[r], e), width);
      }
      if (policy == FillPolicy::Vae) trainers[static_cast<std::size_t>(e)].step(rows);
    }
    FillStatistics stats;
    if (uses_statistics(policy)) stats = running.snapshot();
    fill_in_place(policy, batch, vaes, fill_seed, static_cast<std::uint64_t>(comm.index),
                  uses_statistics(policy) ? &stats : nullptr);
    const auto targets = data.train.target_tensor(batch.sample_index);
    for (int rep = 0; rep < reuse; ++rep) {
      double l = 0.0;
      try {
        l = train_step(art.model, opt, batch.values, targets, loss);
      } catch (const NumericError& err) {
        throw NumericError("ensemble training diverged at communication " + std::to_string(comm.index) + ": " +
                           err.what());
      }
      acc += l * static_cast<double>(batch.samples());
      rows_seen += batch.samples();
      if (rows_seen >= n) {
        art.loss_trace.push_back(acc / static_cast<double>(rows_seen));
        acc = 0.0;
        rows_seen = 0;
      }
    }
  }
  if (rows_seen > 0) art.loss_trace.push_back(acc / static_cast<double>(rows_seen));
  for (auto& v : vaes) v.epochs = schedule.config.effective_decode_epochs();
  return art;
}

}  // namespace

EmbeddingMatrix test_matrix(const ExperimentConfig& config, const ExperimentData& data,
                            const EdgeAssignment& assignment, std::span<const EdgeArtifact> edges,
                            std::span<const VaeModel<float>> vaes) {
  FillStatistics stats;
  if (uses_statistics(config.fill_policy())) {
    const auto received = collect_received(edges, train_members(assignment), data.train, iota_indices(data.train.size()));
    stats = fill_statistics(config.fill_policy(), received);
  }
  return filled_test_matrix(config, data, assignment, edges, vaes,
                            uses_statistics(config.fill_policy()) ? &stats : nullptr);
}

ScenarioRun run_scenario(const ExperimentConfig& config, const ExperimentData& data, const EdgeAssignment& assignment,
                         std::span<const EdgeArtifact> edges, std::span<const VaeModel<float>> vaes) {
  config.validate();
  if (edges.size() != assignment.edges.size()) throw ConfigError("run_scenario: one edge per assignment slice needed");
  const FillPolicy policy = config.fill_policy();
  const auto sc = config.scenario_config();
  const auto ens_cfg = config.ensemble_config(data.task(), data.outputs());
  const auto members = train_members(assignment);
  const Index n = data.train.size();
  const auto received = collect_received(edges, members, data.train, iota_indices(n));
  FillStatistics stats;
  if (uses_statistics(policy)) stats = fill_statistics(policy, received);

  ScenarioRun run;
  const std::uint64_t stream_seed = derive_seed(ens_cfg.seed, "ensemble-stream");
  if (sc.scenario == Scenario::S1) {
    if (policy == FillPolicy::Vae && vaes.size() != edges.size()) throw ConfigError("S1 with vae fill needs trained VAEs");
    auto filled = received;
    fill_in_place(policy, filled, vaes, derive_seed(config.seed, "fill"), 0, uses_statistics(policy) ? &stats : nullptr);
    run.ensemble = train_ensemble(filled, data.train.target_tensor(), ens_cfg);
    run.vaes.assign(vaes.begin(), vaes.end());
    run.ledger = account(plan_schedule(sc, n, static_cast<Index>(edges.size())), std::span(members));
  } else {
    const auto schedule = enumerate_schedule(sc, n, static_cast<Index>(edges.size()), stream_seed);
    run.ensemble = train_streaming(config, data, ens_cfg, received, schedule, run.vaes);
    run.ledger = account(schedule, std::span(members));
  }

  const auto test = filled_test_matrix(config, data, assignment, edges, run.vaes,
                                       uses_statistics(policy) ? &stats : nullptr);
  run.predictions = predict(run.ensemble.model, test, data.task());
  if (data.task() == Task::Classification) {
    run.report = evaluate_classification(run.predictions.classes, data.test.labels, data.test.num_classes,
                                         &run.predictions.scores);
    const auto tm = test_members(assignment);
    const auto votes = vote_baselines(edges, data.test, iota_indices(data.test.size()), std::span(tm));
    run.majority = evaluate_classification(votes.majority, data.test.labels, data.test.num_classes);
    run.average = evaluate_classification(votes.average, data.test.labels, data.test.num_classes);
  } else {
    run.report = evaluate_regression(run.predictions.values, data.test.targets,
                                     data.binning ? &*data.binning : nullptr);
  }
  return run;
}

json result_json(const ExperimentConfig& config, const EdgeAssignment& assignment, std::span<const EdgeArtifact> edges,
                 const ScenarioRun& run) {
  json edge_rows = json::array();
  double best = -std::numeric_limits<double>::infinity(), sum = 0.0;
  Index counted = 0;
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& a = edges[e];
    const double score = a.test_score;
    edge_rows.push_back({{"edge", e},
                         {"architecture", a.config.describe()},
                         {"epochs", a.epochs_run},
                         {"parameters", a.parameter_count()},
                         {"train_samples", assignment.edges[e].train.size()},
                         {"test_samples", assignment.edges[e].test.size()},
                         {"train_score", std::isfinite(a.train_score) ? json(a.train_score) : json(nullptr)},
                         {"test_score", std::isfinite(score) ? json(score) : json(nullptr)}});
    if (std::isfinite(score)) {
      best = std::max(best, score);
      sum += score;
      ++counted;
    }
  }
  json r;
  r["scenario"] = config.scenario;
  r["fill"] = config.fill;
  r["alpha"] = config.alpha;
  r["delta"] = config.delta;
  r["seed"] = config.seed;
  r["edges"] = config.edges;
  r["task"] = run.report.task == Task::Classification ? "classification" : "regression";
  r["accuracy"] = run.report.accuracy;
  r["metrics"] = run.report.to_json();
  if (run.majority) r["majority_vote_accuracy"] = run.majority->accuracy;
  if (run.average) r["average_vote_accuracy"] = run.average->accuracy;
  r["best_edge_score"] = counted ? json(best) : json(nullptr);
  r["mean_edge_score"] = counted ? json(sum / static_cast<double>(counted)) : json(nullptr);
  r["train_coverage"] = assignment.train_coverage();
  r["test_coverage"] = assignment.test_coverage();
  r["ensemble_parameters"] = run.ensemble.model.parameter_count();
  r["vae_parameters"] = run.vaes.empty() ? json(nullptr) : json(run.vaes.front().parameter_count());
  r["ensemble_loss_trace"] = run.ensemble.loss_trace;
  r["ledger"] = run.ledger.to_json();
  r["edge_models"] = edge_rows;
  return r;
}

}  // namespace convens
