#pragma once

#include "convens/common.hpp"

#include <json.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace convens {

/// S1: each edge ships all its embeddings once. S2: the server keeps one
/// mini-batch and reuses it for Ep / Ep_d consecutive steps. S3: every
/// ensemble step requests a fresh mini-batch.
enum class Scenario { S1, S2, S3 };

std::string to_string(Scenario s);
Scenario parse_scenario(const std::string& name);

struct ScenarioConfig {
  Scenario scenario = Scenario::S1;
  /// Ep_Ens.
  int epochs = 100;
  /// Ep_Ens_d, the number of passes over the data that are transferred.
  /// 0 means "same as epochs". S2 requires a proper divisor of epochs.
  int decode_epochs = 0;
  Index batch_size = 128;
  /// L_com.
  Index width = 64;
  Index bytes_per_value = 4;
  double link_bits_per_second = 450e6;
  /// Fixed cost added to every transfer.
  double message_overhead_seconds = 0.0;

  int effective_decode_epochs() const { return decode_epochs == 0 ? epochs : decode_epochs; }
  /// Ensemble steps taken on each transferred batch.
  int reuse() const { return scenario == Scenario::S2 ? epochs / effective_decode_epochs() : 1; }
  void validate() const;
};

/// One request/response round between the server and the edges. For S1 there
/// is one per edge; for S2/S3 one per mini-batch of the transfer stream.
struct Communication {
  Index index = 0;
  Index rows = 0;
  /// Stream positions in [0, n); filled only by enumerate_schedule.
  std::vector<Index> samples;
};

struct TransferSchedule {
  ScenarioConfig config;
  Index samples = 0;
  Index edges = 0;
  bool enumerated = false;
  std::vector<Communication> communications;

  Index count() const { return static_cast<Index>(communications.size()); }
};

/// Closed form: N for S1, ceil(n * Ep_d / b) for S2 and S3 (Ep_d = Ep in S3).
Index communication_count(const ScenarioConfig& config, Index samples, Index edges);

/// Sizes only; no sample permutation is drawn.
TransferSchedule plan_schedule(const ScenarioConfig& config, Index samples, Index edges);

/// Same schedule with each mini-batch's stream positions, drawn as the
/// ensemble trainer draws them from `seed`.
TransferSchedule enumerate_schedule(const ScenarioConfig& config, Index samples, Index edges, std::uint64_t seed);

struct TransferEvent {
  Index communication = 0;
  Index edge = 0;
  Index rows = 0;
  std::uint64_t bytes = 0;
  double seconds = 0.0;
  /// Running total including this event.
  std::uint64_t cumulative_bytes = 0;
};

struct ScenarioLedger {
  ScenarioConfig config;
  Index samples = 0;
  Index edges = 0;
  std::vector<TransferEvent> events;
  Index communications = 0;
  std::vector<Index> per_edge_communications;
  /// M_transfer: largest single edge-to-server transfer.
  std::uint64_t transfer_bytes = 0;
  /// Extra server storage for received embeddings.
  std::uint64_t server_memory_bytes = 0;
  /// Largest buffer an edge must hold for one transfer.
  std::uint64_t edge_memory_bytes = 0;
  std::uint64_t cumulative_bytes = 0;
  /// Sum of event times, as if every transfer shared one link.
  double serial_seconds = 0.0;
  /// Sum over communications of the slowest edge, edges sending in parallel.
  double parallel_seconds = 0.0;

  void record(Index communication, Index edge, Index rows);
  nlohmann::json to_json() const;
  std::string to_csv() const;
};

double megabytes(std::uint64_t bytes);
/// Rounded to one decimal, as the memory tables print it.
double megabytes_1dp(std::uint64_t bytes);

ScenarioLedger make_ledger(const TransferSchedule& schedule);

/// Nominal accounting: in S1 edge i sends samples_per_edge[i] rows; in S2/S3
/// every edge answers each communication with a full batch of its rows.
ScenarioLedger account(const TransferSchedule& schedule, std::span<const Index> samples_per_edge);

/// Membership accounting: members[i] lists the stream positions edge i holds
/// (sorted). S2/S3 need an enumerated schedule; an edge holding none of a
/// batch still answers with an empty transfer.
ScenarioLedger account(const TransferSchedule& schedule, std::span<const std::vector<Index>> members);

}  // namespace convens
