// Command-line driver: one subcommand per pipeline stage.

#include "convens/io/serialize.hpp"
#include "convens/pipeline/experiment.hpp"
#include "convens/tiling/plan.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace convens;

namespace {

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

/// Parses a flag value into the JSON type of the default for `key`.
json typed_value(const std::string& key, const json& like, const std::string& text) {
  try {
    if (like.is_string()) return text;
    if (like.is_array()) {
      json arr = json::array();
      std::stringstream ss(text);
      std::string part;
      while (std::getline(ss, part, ',')) arr.push_back(std::stoll(part));
      return arr;
    }
    if (like.is_number_float()) return std::stod(text);
    if (like.is_number_unsigned()) return std::stoull(text);
    return std::stoll(text);
  } catch (const std::exception&) {
    throw ConfigError("flag " + flag_name(key) + ": cannot parse '" + text + "'");
  }
}

/// Config file plus one flag per ExperimentConfig field.
struct ConfigOptions {
  std::string config_path;
  std::map<std::string, std::string> values;
  bool force = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON experiment config");
    app->add_flag("--force", force, "Overwrite existing stage outputs");
    const json defaults = ExperimentConfig{}.to_json();
    for (const auto& [key, value] : defaults.items()) {
      values[key];
      app->add_option(flag_name(key), values[key], "Overrides '" + key + "' (default " + value.dump() + ")");
    }
  }

  ExperimentConfig resolve() const {
    const json defaults = ExperimentConfig{}.to_json();
    json overrides = json::object();
    for (const auto& [key, text] : values) {
      if (!text.empty()) overrides[key] = typed_value(key, defaults[key], text);
    }
    json base = json::object();
    if (!config_path.empty()) {
      base = read_json(config_path);
    } else {
      const std::string dir = overrides.contains("output_dir") ? overrides["output_dir"].get<std::string>()
                                                                : defaults["output_dir"].get<std::string>();
      if (fs::exists(fs::path(dir) / "config.json")) base = read_json(fs::path(dir) / "config.json");
    }
    if (!base.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : overrides.items()) base[key] = value;
    return ExperimentConfig::from_json(base);
  }
};

fs::path edge_path(const fs::path& dir, std::size_t e) {
  char name[32];
  std::snprintf(name, sizeof name, "edge_%03zu.bin", e);
  return dir / "edges" / name;
}

fs::path vae_path(const fs::path& dir, std::size_t e) {
  char name[32];
  std::snprintf(name, sizeof name, "vae_%03zu.bin", e);
  return dir / "vaes" / name;
}

fs::path run_path(const ExperimentConfig& c) { return fs::path(c.output_dir) / (c.scenario + "-" + c.fill); }

void refuse_overwrite(const fs::path& p, bool force) {
  if (fs::exists(p) && !force) {
    throw ConfigError(p.string() + " already exists; pass --force to overwrite");
  }
}

EdgeAssignment load_assignment(const ExperimentConfig& c) {
  const fs::path p = fs::path(c.output_dir) / "assignment.json";
  if (!fs::exists(p)) throw FormatError("missing " + p.string() + "; run the partition stage first");
  const json j = read_json(p);
  if (!j.contains("config_hash") || j["config_hash"].get<std::uint64_t>() != stage_hash(c, Stage::Partition)) {
    throw FormatError(p.string() + ": config hash mismatch; rerun partition with the current config");
  }
  return assignment_from_json(j);
}

std::vector<EdgeArtifact> load_edges(const ExperimentConfig& c) {
  std::vector<EdgeArtifact> out;
  for (int e = 0; e < c.edges; ++e) {
    out.push_back(load_edge(edge_path(c.output_dir, static_cast<std::size_t>(e)), stage_hash(c, Stage::Edges)));
  }
  return out;
}

std::vector<VaeModel<float>> load_vaes(const ExperimentConfig& c) {
  std::vector<VaeModel<float>> out;
  for (int e = 0; e < c.edges; ++e) {
    out.push_back(load_vae(vae_path(c.output_dir, static_cast<std::size_t>(e)), stage_hash(c, Stage::Vaes)));
  }
  return out;
}

void log(const std::string& msg) { std::cerr << msg << "\n"; }

int cmd_partition(const ConfigOptions& o) {
  const auto c = o.resolve();
  const fs::path dir = c.output_dir;
  refuse_overwrite(dir / "assignment.json", o.force);
  const auto data = load_experiment_data(c);
  const auto a = make_assignment(c, data);
  json j = to_json(a);
  j["config_hash"] = stage_hash(c, Stage::Partition);
  write_json(dir / "config.json", c.to_json());
  write_json(dir / "assignment.json", j);
  json per_edge = json::array();
  for (const auto& e : a.edges) per_edge.push_back({{"train", e.train.size()}, {"test", e.test.size()}});
  const json coverage{{"train_coverage", a.train_coverage()},
                      {"test_coverage", a.test_coverage()},
                      {"train_samples", a.train_size},
                      {"test_samples", a.test_size},
                      {"per_edge", per_edge}};
  write_json(dir / "coverage.json", coverage);
  std::cout << coverage.dump(2) << "\n";
  return 0;
}

int cmd_train_edges(const ConfigOptions& o) {
  const auto c = o.resolve();
  refuse_overwrite(edge_path(c.output_dir, 0), o.force);
  const auto a = load_assignment(c);
  const auto data = load_experiment_data(c);
  const auto edges = train_edges(c, data, a);
  json summary = json::array();
  for (std::size_t e = 0; e < edges.size(); ++e) {
    save_edge(edge_path(c.output_dir, e), edges[e], stage_hash(c, Stage::Edges));
    summary.push_back({{"edge", e},
                       {"architecture", edges[e].config.describe()},
                       {"epochs", edges[e].epochs_run},
                       {"parameters", edges[e].parameter_count()},
                       {"train_score", edges[e].train_score},
                       {"test_score", std::isfinite(edges[e].test_score) ? json(edges[e].test_score) : json(nullptr)}});
  }
  write_json(fs::path(c.output_dir) / "edges" / "edges.json", summary);
  log("trained " + std::to_string(edges.size()) + " edge models");
  return 0;
}

int cmd_train_vaes(const ConfigOptions& o) {
  const auto c = o.resolve();
  refuse_overwrite(vae_path(c.output_dir, 0), o.force);
  const auto a = load_assignment(c);
  const auto edges = load_edges(c);
  const auto data = load_experiment_data(c);
  const auto vaes = train_vaes(c, data, a, edges);
  for (std::size_t e = 0; e < vaes.size(); ++e) save_vae(vae_path(c.output_dir, e), vaes[e], stage_hash(c, Stage::Vaes));
  log("trained " + std::to_string(vaes.size()) + " VAEs");
  return 0;
}

int cmd_train_ensemble(const ConfigOptions& o) {
  const auto c = o.resolve();
  const fs::path dir = run_path(c);
  refuse_overwrite(dir / "result.json", o.force);
  const auto a = load_assignment(c);
  const auto edges = load_edges(c);
  std::vector<VaeModel<float>> vaes;
  if (c.scenario_kind() == Scenario::S1 && c.fill_policy() == FillPolicy::Vae) vaes = load_vaes(c);
  const auto data = load_experiment_data(c);
  const auto start = std::chrono::steady_clock::now();
  const auto run = run_scenario(c, data, a, edges, vaes);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  save_ensemble(dir / "ensemble.bin", run.ensemble, stage_hash(c, Stage::Ensemble));
  write_json(dir / "metrics.json", run.report.to_json());
  write_text(dir / "metrics.csv", run.report.to_csv());
  write_text(dir / "ledger_events.csv", run.ledger.to_csv());
  write_json(dir / "ledger.json", run.ledger.to_json());
  auto result = result_json(c, a, edges, run);
  result["train_seconds"] = seconds;
  write_json(dir / "result.json", result);
  std::cout << "accuracy " << run.report.accuracy;
  if (data.task() == Task::Regression) std::cout << "  rmse " << run.report.rmse;
  std::cout << "\n";
  return 0;
}

int cmd_simulate(const ConfigOptions& o, bool schedule_only, Index samples, const std::string& out) {
  const auto c = o.resolve();
  const auto sc = c.scenario_config();
  json summary;
  if (schedule_only) {
    const Index n = samples > 0 ? samples : c.train_samples;
    summary = {{"scenario", c.scenario},
               {"samples", n},
               {"edges", c.edges},
               {"communications", communication_count(sc, n, c.edges)}};
    const auto schedule = plan_schedule(sc, n, c.edges);
    const std::vector<Index> per_edge(static_cast<std::size_t>(c.edges), n);
    summary["ledger"] = account(schedule, per_edge).to_json();
  } else {
    const auto a = load_assignment(c);
    std::vector<std::vector<Index>> members;
    for (const auto& e : a.edges) members.push_back(e.train);
    const auto schedule = enumerate_schedule(sc, a.train_size, c.edges,
                                             derive_seed(c.ensemble_config(Task::Classification, 2).seed, "ensemble-stream"));
    const auto ledger = account(schedule, std::span<const std::vector<Index>>(members));
    summary = ledger.to_json();
    const fs::path dir = out.empty() ? run_path(c) : fs::path(out);
    write_text(dir / "ledger_events.csv", ledger.to_csv());
    write_json(dir / "ledger.json", summary);
  }
  std::cout << summary.dump(2) << "\n";
  return 0;
}

/// Layer file: {"input_shape": [...], "layers": [...]} as a model description,
/// planned through the same Model shape inference the engine uses.
int cmd_tile_plan(const std::string& layers_path, const std::string& factors, Index batch, Index batch_factor,
                  Index channel_factor, bool as_json) {
  const json j = read_json(layers_path);
  if (!j.contains("input_shape") || !j.contains("layers")) {
    throw FormatError(layers_path + ": expected keys input_shape and layers");
  }
  std::vector<LayerSpec> layers;
  for (const auto& l : j["layers"]) layers.push_back(layer_from_json(l));
  const Model<float> model(j["input_shape"].get<Shape>(), layers, 0);
  std::vector<Index> f;
  std::stringstream ss(factors);
  std::string part;
  while (std::getline(ss, part, ',')) f.push_back(std::stoll(part));
  const auto plan = plan_tiling(tiling_request_from_model(model, batch, batch_factor, channel_factor, f));
  if (as_json) {
    std::cout << plan_report_json(plan).dump(2) << "\n";
  } else {
    std::cout << plan_report_text(plan);
  }
  return 0;
}

int cmd_report(const std::string& runs, const std::string& out) {
  std::vector<json> rows;
  if (fs::exists(runs)) {
    for (const auto& entry : fs::recursive_directory_iterator(runs)) {
      if (entry.is_regular_file() && entry.path().filename() == "result.json") rows.push_back(read_json(entry.path()));
    }
  }
  if (rows.empty()) throw ConfigError("no runs found under " + runs);
  std::sort(rows.begin(), rows.end(), [](const json& a, const json& b) {
    return std::tie(a["scenario"], a["fill"], a["alpha"], a["delta"], a["seed"]) <
           std::tie(b["scenario"], b["fill"], b["alpha"], b["delta"], b["seed"]);
  });
  std::ostringstream csv;
  csv.precision(10);
  csv << "scenario,fill,alpha,delta,seed,task,accuracy,rmse,majority_vote,average_vote,best_edge,mean_edge,"
         "communications,cumulative_bytes,serial_seconds,server_memory_bytes,transfer_bytes,ensemble_parameters,"
         "vae_parameters,edge_parameters_total\n";
  json table = json::array();
  for (const auto& r : rows) {
    Index edge_params = 0;
    for (const auto& e : r["edge_models"]) edge_params += e["parameters"].get<Index>();
    const auto num = [](const json& v) { return v.is_null() ? std::string() : v.dump(); };
    const json& ledger = r["ledger"];
    const json& metrics = r["metrics"];
    csv << r["scenario"].get<std::string>() << ',' << r["fill"].get<std::string>() << ',' << r["alpha"] << ','
        << r["delta"] << ',' << r["seed"] << ',' << r["task"].get<std::string>() << ',' << r["accuracy"] << ','
        << (metrics.contains("rmse") ? metrics["rmse"].dump() : "") << ','
        << num(r.value("majority_vote_accuracy", json(nullptr))) << ','
        << num(r.value("average_vote_accuracy", json(nullptr))) << ',' << num(r["best_edge_score"]) << ','
        << num(r["mean_edge_score"]) << ',' << ledger["communications"] << ',' << ledger["cumulative_bytes"] << ','
        << ledger["serial_seconds"] << ',' << ledger["server_memory_bytes"] << ',' << ledger["transfer_bytes"] << ','
        << r["ensemble_parameters"] << ',' << num(r["vae_parameters"]) << ',' << edge_params << '\n';
    json row = r;
    row.erase("edge_models");
    row.erase("ensemble_loss_trace");
    row["edge_parameters_total"] = edge_params;
    table.push_back(row);
  }
  const fs::path dir = out.empty() ? fs::path(runs) : fs::path(out);
  write_text(dir / "report.csv", csv.str());
  write_json(dir / "report.json", table);
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Convolutional ensemble of weak edge models: partition, train, simulate, report"};
  app.require_subcommand(1);

  ConfigOptions part_opts, edge_opts, vae_opts, ens_opts, sim_opts;
  auto* partition = app.add_subcommand("partition", "Sample per-edge train/test slices");
  part_opts.attach(partition);
  auto* train_edges_cmd = app.add_subcommand("train-edges", "Train the edge models");
  edge_opts.attach(train_edges_cmd);
  auto* train_vaes_cmd = app.add_subcommand("train-vaes", "Train one VAE per edge on its embeddings");
  vae_opts.attach(train_vaes_cmd);
  auto* train_ens = app.add_subcommand("train-ensemble", "Train and evaluate the ensemble under a scenario");
  ens_opts.attach(train_ens);

  auto* simulate = app.add_subcommand("simulate", "Transfer schedule and ledger without training");
  sim_opts.attach(simulate);
  bool schedule_only = false;
  Index sim_samples = 0;
  std::string sim_out;
  simulate->add_flag("--schedule-only", schedule_only, "Count-only mode from sample totals; no assignment needed");
  simulate->add_option("--samples", sim_samples, "Training samples for --schedule-only (default train_samples)");
  simulate->add_option("--out", sim_out, "Directory for the ledger files");

  auto* tile = app.add_subcommand("tile-plan", "Tiling plan for a layer file and factor list");
  std::string layers_path, factors;
  Index batch = 1, batch_factor = 1, channel_factor = 1;
  bool tile_json = false;
  tile->add_option("--layers", layers_path, "JSON with input_shape and layers")->required();
  tile->add_option("--factors", factors, "Comma-separated f per conv/dense layer")->required();
  tile->add_option("--batch", batch, "Mini-batch size BS");
  tile->add_option("--batch-factor", batch_factor, "BS_f");
  tile->add_option("--channel-factor", channel_factor, "C_f");
  tile->add_flag("--json", tile_json, "Emit JSON instead of text");

  auto* report = app.add_subcommand("report", "Collect result.json files into report.csv/json");
  std::string runs_dir, report_out;
  report->add_option("--runs", runs_dir, "Directory searched for result.json")->required();
  report->add_option("--out", report_out, "Output directory (default: --runs)");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*partition) return cmd_partition(part_opts);
    if (*train_edges_cmd) return cmd_train_edges(edge_opts);
    if (*train_vaes_cmd) return cmd_train_vaes(vae_opts);
    if (*train_ens) return cmd_train_ensemble(ens_opts);
    if (*simulate) return cmd_simulate(sim_opts, schedule_only, sim_samples, sim_out);
    if (*tile) return cmd_tile_plan(layers_path, factors, batch, batch_factor, channel_factor, tile_json);
    if (*report) return cmd_report(runs_dir, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
