#include "convens/comms/comms.hpp"

#include "convens/ensemble/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace convens {

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::S1: return "S1";
    case Scenario::S2: return "S2";
    case Scenario::S3: return "S3";
  }
  return "?";
}

Scenario parse_scenario(const std::string& name) {
  if (name == "S1" || name == "s1" || name == "1") return Scenario::S1;
  if (name == "S2" || name == "s2" || name == "2") return Scenario::S2;
  if (name == "S3" || name == "s3" || name == "3") return Scenario::S3;
  throw ConfigError("unknown scenario '" + name + "' (expected S1, S2 or S3)");
}

void ScenarioConfig::validate() const {
  if (epochs < 1) throw ConfigError("scenario: Ep_Ens must be >= 1");
  if (batch_size < 1) throw ConfigError("scenario: batch size must be >= 1");
  if (width < 1 || bytes_per_value < 1) throw ConfigError("scenario: width and bytes per value must be >= 1");
  if (!(link_bits_per_second > 0.0)) throw ConfigError("scenario: link rate must be positive");
  if (message_overhead_seconds < 0.0) throw ConfigError("scenario: message overhead must be >= 0");
  if (decode_epochs < 0) throw ConfigError("scenario: Ep_d must be >= 1");
  const int d = effective_decode_epochs();
  if (scenario == Scenario::S3 && d != epochs) {
    throw ConfigError("scenario S3 requires Ep_d == Ep_Ens (got " + std::to_string(d) + " vs " +
                      std::to_string(epochs) + ")");
  }
  if (scenario == Scenario::S2) {
    if (d == epochs) throw ConfigError("scenario S2 requires Ep_d < Ep_Ens; Ep_d == Ep_Ens is S3");
    if (epochs % d != 0) {
      throw ConfigError("scenario S2: Ep_d=" + std::to_string(d) + " does not divide Ep_Ens=" +
                        std::to_string(epochs));
    }
  }
}

Index communication_count(const ScenarioConfig& config, Index samples, Index edges) {
  config.validate();
  if (config.scenario == Scenario::S1) return edges;
  if (samples <= 0) return 0;
  const Index rows = samples * config.effective_decode_epochs();
  return (rows + config.batch_size - 1) / config.batch_size;
}

TransferSchedule plan_schedule(const ScenarioConfig& config, Index samples, Index edges) {
  config.validate();
  if (samples < 0 || edges < 0) throw ConfigError("schedule: negative sample or edge count");
  TransferSchedule s;
  s.config = config;
  s.samples = samples;
  s.edges = edges;
  if (config.scenario == Scenario::S1) {
    for (Index e = 0; e < edges; ++e) s.communications.push_back({e, samples, {}});
    return s;
  }
  Index remaining = samples * config.effective_decode_epochs();
  for (Index i = 0; remaining > 0; ++i) {
    const Index rows = std::min(remaining, config.batch_size);
    s.communications.push_back({i, rows, {}});
    remaining -= rows;
  }
  return s;
}

TransferSchedule enumerate_schedule(const ScenarioConfig& config, Index samples, Index edges, std::uint64_t seed) {
  auto s = plan_schedule(config, samples, edges);
  s.enumerated = true;
  if (config.scenario == Scenario::S1) {
    for (auto& c : s.communications) {
      c.samples.resize(static_cast<std::size_t>(samples));
      for (Index k = 0; k < samples; ++k) c.samples[static_cast<std::size_t>(k)] = k;
    }
    return s;
  }
  auto stream = sample_stream(samples, config.effective_decode_epochs(), config.batch_size, seed);
  if (stream.size() != s.communications.size()) throw NumericError("schedule: stream/count mismatch");
  for (std::size_t i = 0; i < stream.size(); ++i) s.communications[i].samples = std::move(stream[i]);
  return s;
}

void ScenarioLedger::record(Index communication, Index edge, Index rows) {
  if (edge < 0 || edge >= edges) throw ConfigError("ledger: edge index out of range");
  if (rows < 0) throw ConfigError("ledger: negative row count");
  TransferEvent ev;
  ev.communication = communication;
  ev.edge = edge;
  ev.rows = rows;
  ev.bytes = static_cast<std::uint64_t>(rows) * static_cast<std::uint64_t>(config.width) *
             static_cast<std::uint64_t>(config.bytes_per_value);
  ev.seconds = static_cast<double>(ev.bytes) * 8.0 / config.link_bits_per_second + config.message_overhead_seconds;
  cumulative_bytes += ev.bytes;
  ev.cumulative_bytes = cumulative_bytes;
  serial_seconds += ev.seconds;
  if (events.empty() || events.back().communication != communication) {
    ++communications;
    parallel_seconds += ev.seconds;
  } else {
    // Time of this communication is its slowest edge.
    double slowest = 0.0;
    for (auto it = events.rbegin(); it != events.rend() && it->communication == communication; ++it) {
      slowest = std::max(slowest, it->seconds);
    }
    if (ev.seconds > slowest) parallel_seconds += ev.seconds - slowest;
  }
  ++per_edge_communications[static_cast<std::size_t>(edge)];
  transfer_bytes = std::max(transfer_bytes, ev.bytes);
  edge_memory_bytes = std::max(edge_memory_bytes, ev.bytes);
  events.push_back(ev);
}

double megabytes(std::uint64_t bytes) { return static_cast<double>(bytes) / 1e6; }

double megabytes_1dp(std::uint64_t bytes) { return std::round(megabytes(bytes) * 10.0) / 10.0; }

ScenarioLedger make_ledger(const TransferSchedule& schedule) {
  ScenarioLedger l;
  l.config = schedule.config;
  l.samples = schedule.samples;
  l.edges = schedule.edges;
  l.per_edge_communications.assign(static_cast<std::size_t>(schedule.edges), 0);
  const auto value_bytes = static_cast<std::uint64_t>(l.config.width * l.config.bytes_per_value);
  const auto n_edges = static_cast<std::uint64_t>(schedule.edges);
  switch (l.config.scenario) {
    case Scenario::S1:
      l.server_memory_bytes = static_cast<std::uint64_t>(schedule.samples) * n_edges * value_bytes;
      break;
    case Scenario::S2:
      l.server_memory_bytes = schedule.samples > 0
                                  ? static_cast<std::uint64_t>(std::min(schedule.samples * l.config.effective_decode_epochs(),
                                                                        l.config.batch_size)) *
                                        n_edges * value_bytes
                                  : 0;
      break;
    case Scenario::S3:
      l.server_memory_bytes = 0;
      break;
  }
  return l;
}

ScenarioLedger account(const TransferSchedule& schedule, std::span<const Index> samples_per_edge) {
  if (static_cast<Index>(samples_per_edge.size()) != schedule.edges) {
    throw ConfigError("account: expected " + std::to_string(schedule.edges) + " per-edge sample counts");
  }
  auto l = make_ledger(schedule);
  for (const auto& c : schedule.communications) {
    if (schedule.config.scenario == Scenario::S1) {
      l.record(c.index, c.index, samples_per_edge[static_cast<std::size_t>(c.index)]);
    } else {
      for (Index e = 0; e < schedule.edges; ++e) l.record(c.index, e, c.rows);
    }
  }
  return l;
}

ScenarioLedger account(const TransferSchedule& schedule, std::span<const std::vector<Index>> members) {
  if (static_cast<Index>(members.size()) != schedule.edges) {
    throw ConfigError("account: expected " + std::to_string(schedule.edges) + " membership lists");
  }
  if (schedule.config.scenario != Scenario::S1 && !schedule.enumerated) {
    throw ConfigError("account: membership accounting needs an enumerated schedule");
  }
  auto l = make_ledger(schedule);
  for (const auto& c : schedule.communications) {
    if (schedule.config.scenario == Scenario::S1) {
      l.record(c.index, c.index, static_cast<Index>(members[static_cast<std::size_t>(c.index)].size()));
      continue;
    }
    for (Index e = 0; e < schedule.edges; ++e) {
      const auto& held = members[static_cast<std::size_t>(e)];
      Index rows = 0;
      for (Index k : c.samples) rows += std::binary_search(held.begin(), held.end(), k);
      l.record(c.index, e, rows);
    }
  }
  return l;
}

nlohmann::json ScenarioLedger::to_json() const {
  nlohmann::json j;
  j["scenario"] = to_string(config.scenario);
  j["epochs"] = config.epochs;
  j["decode_epochs"] = config.effective_decode_epochs();
  j["batch_size"] = config.batch_size;
  j["width"] = config.width;
  j["link_bits_per_second"] = config.link_bits_per_second;
  j["samples"] = samples;
  j["edges"] = edges;
  j["communications"] = communications;
  j["per_edge_communications"] = per_edge_communications;
  j["events"] = events.size();
  j["transfer_bytes"] = transfer_bytes;
  j["server_memory_bytes"] = server_memory_bytes;
  j["edge_memory_bytes"] = edge_memory_bytes;
  j["cumulative_bytes"] = cumulative_bytes;
  j["transfer_mb"] = megabytes_1dp(transfer_bytes);
  j["server_memory_mb"] = megabytes_1dp(server_memory_bytes);
  j["edge_memory_mb"] = megabytes_1dp(edge_memory_bytes);
  j["cumulative_mb"] = megabytes_1dp(cumulative_bytes);
  j["serial_seconds"] = serial_seconds;
  j["parallel_seconds"] = parallel_seconds;
  return j;
}

std::string ScenarioLedger::to_csv() const {
  std::ostringstream os;
  os.precision(12);
  os << "communication,edge,rows,bytes,seconds,cumulative_bytes\n";
  for (const auto& e : events) {
    os << e.communication << ',' << e.edge << ',' << e.rows << ',' << e.bytes << ',' << e.seconds << ','
       << e.cumulative_bytes << '\n';
  }
  return os.str();
}

}  // namespace convens
