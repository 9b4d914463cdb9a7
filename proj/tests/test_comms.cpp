#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "convens/comms/comms.hpp"
#include "support.hpp"

using namespace convens;

namespace {

ScenarioConfig scenario(Scenario s, int epochs, int decode, Index batch = 128) {
  ScenarioConfig c;
  c.scenario = s;
  c.epochs = epochs;
  c.decode_epochs = decode;
  c.batch_size = batch;
  return c;
}

std::vector<std::vector<Index>> random_members(Index n, Index edges, std::mt19937_64& rng) {
  std::vector<std::vector<Index>> out(static_cast<std::size_t>(edges));
  std::bernoulli_distribution keep(0.5);
  for (Index k = 0; k < n; ++k) {
    for (auto& m : out) {
      if (keep(rng)) m.push_back(k);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("communication counts") {
  CHECK(communication_count(scenario(Scenario::S3, 100, 0), 50000, 20) == 39063);
  CHECK(communication_count(scenario(Scenario::S2, 100, 20), 50000, 20) == 7813);
  CHECK(communication_count(scenario(Scenario::S1, 100, 0), 50000, 20) == 20);
  CHECK(plan_schedule(scenario(Scenario::S3, 100, 0), 50000, 20).count() == 39063);
}

TEST_CASE("enumerated schedules agree with the closed form and brute force") {
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 40; ++trial) {
    const Index n = testing::uniform_index(rng, 1, 300);
    const Index b = testing::uniform_index(rng, 1, 64);
    const int ep = static_cast<int>(testing::uniform_index(rng, 1, 6)) * 2;
    const auto s = trial % 2 ? scenario(Scenario::S2, ep, ep / 2, b) : scenario(Scenario::S3, ep, 0, b);
    const auto sched = enumerate_schedule(s, n, 3, rng());
    // Brute force: walk the transferred rows one at a time.
    Index comms = 0, in_batch = 0;
    for (Index row = 0; row < n * s.effective_decode_epochs(); ++row) {
      if (in_batch == 0) ++comms;
      in_batch = (in_batch + 1) % b;
    }
    CHECK(sched.count() == comms);
    CHECK(sched.count() == communication_count(s, n, 3));
    Index rows = 0;
    for (const auto& c : sched.communications) {
      CHECK(static_cast<Index>(c.samples.size()) == c.rows);
      rows += c.rows;
    }
    CHECK(rows == n * s.effective_decode_epochs());
  }
}

TEST_CASE("memory table values") {
  ScenarioConfig s1 = scenario(Scenario::S1, 100, 0);
  for (auto [samples, mb] : {std::pair<Index, double>{30000, 7.7}, {35000, 9.0}, {43500, 11.1}}) {
    std::vector<Index> per_edge(20, samples);
    const auto l = account(plan_schedule(s1, 50000, 20), per_edge);
    CHECK(megabytes_1dp(l.transfer_bytes) == doctest::Approx(mb));
  }
  std::vector<Index> per_edge(20, 30000);
  CHECK(megabytes_1dp(account(plan_schedule(s1, 50000, 20), per_edge).server_memory_bytes) == 256.0);
  const auto s2 = account(plan_schedule(scenario(Scenario::S2, 100, 20), 50000, 20), per_edge);
  CHECK(megabytes_1dp(s2.server_memory_bytes) == 0.7);
  CHECK(s2.transfer_bytes == 128u * 64u * 4u);
  CHECK(account(plan_schedule(scenario(Scenario::S3, 100, 0), 50000, 20), per_edge).server_memory_bytes == 0u);
}

TEST_CASE("membership accounting conserves rows and bytes") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = testing::uniform_index(rng, 10, 200), edges = testing::uniform_index(rng, 1, 5);
    const auto members = random_members(n, edges, rng);
    Index held = 0;
    for (const auto& m : members) held += static_cast<Index>(m.size());
    for (auto s : {scenario(Scenario::S1, 4, 0, 16), scenario(Scenario::S2, 4, 2, 16), scenario(Scenario::S3, 4, 0, 16)}) {
      const auto l = account(enumerate_schedule(s, n, edges, 1), members);
      Index rows = 0;
      std::uint64_t bytes = 0;
      for (const auto& e : l.events) {
        rows += e.rows;
        bytes += e.bytes;
        CHECK(e.bytes == static_cast<std::uint64_t>(e.rows * 64 * 4));
        CHECK(e.cumulative_bytes == bytes);
      }
      CHECK(bytes == l.cumulative_bytes);
      CHECK(rows == held * (s.scenario == Scenario::S1 ? 1 : s.effective_decode_epochs()));
      CHECK(l.parallel_seconds <= l.serial_seconds + 1e-12);
      CHECK(static_cast<Index>(l.events.size()) == l.communications * (s.scenario == Scenario::S1 ? 1 : edges));
    }
  }
}

TEST_CASE("cumulative bytes order S3 >= S2 >= S1") {
  std::mt19937_64 rng(9);
  const auto members = random_members(500, 4, rng);
  const auto bytes = [&](ScenarioConfig c) { return account(enumerate_schedule(c, 500, 4, 3), members).cumulative_bytes; };
  const auto s1 = bytes(scenario(Scenario::S1, 20, 0));
  const auto s2 = bytes(scenario(Scenario::S2, 20, 4));
  const auto s3 = bytes(scenario(Scenario::S3, 20, 0));
  CHECK(s3 >= s2);
  CHECK(s2 >= s1);
  CHECK(s3 == 20 * s1);
  CHECK(s2 == 4 * s1);
}

TEST_CASE("latency follows the link rate") {
  std::vector<Index> per_edge{1000, 3000};
  auto c = scenario(Scenario::S1, 10, 0);
  const auto slow = account(plan_schedule(c, 4000, 2), per_edge);
  CHECK(slow.serial_seconds == doctest::Approx(4000.0 * 256 * 8 / 450e6));
  CHECK(slow.parallel_seconds == doctest::Approx(slow.serial_seconds));
  c.link_bits_per_second *= 2;
  const auto fast = account(plan_schedule(c, 4000, 2), per_edge);
  CHECK(fast.serial_seconds == doctest::Approx(slow.serial_seconds / 2));

  auto s3 = scenario(Scenario::S3, 1, 0, 100);
  s3.message_overhead_seconds = 0.5;
  const auto l = account(plan_schedule(s3, 200, 2), per_edge);
  CHECK(l.parallel_seconds == doctest::Approx(2 * (0.5 + 100.0 * 256 * 8 / 450e6)));
  CHECK(l.serial_seconds == doctest::Approx(2 * l.parallel_seconds));
}

TEST_CASE("scenario validation") {
  CHECK_THROWS_AS(scenario(Scenario::S2, 100, 30).validate(), ConfigError);
  CHECK_THROWS_AS(scenario(Scenario::S2, 100, 100).validate(), ConfigError);
  CHECK_THROWS_AS(scenario(Scenario::S3, 100, 20).validate(), ConfigError);
  CHECK_NOTHROW(scenario(Scenario::S2, 100, 20).validate());
  CHECK(scenario(Scenario::S2, 100, 20).reuse() == 5);
  CHECK(parse_scenario("s2") == Scenario::S2);
  CHECK(parse_scenario("3") == Scenario::S3);
  CHECK_THROWS_AS(parse_scenario("S4"), ConfigError);
  const auto plain = plan_schedule(scenario(Scenario::S3, 1, 0), 10, 2);
  std::vector<std::vector<Index>> members{{1}, {2}};
  CHECK_THROWS_AS(account(plain, members), ConfigError);
}

TEST_CASE("ledger exports") {
  std::vector<Index> per_edge{10, 20};
  const auto l = account(plan_schedule(scenario(Scenario::S1, 1, 0), 20, 2), per_edge);
  const auto j = l.to_json();
  CHECK(j["communications"] == 2);
  CHECK(j["cumulative_bytes"] == 30 * 256);
  const auto csv = l.to_csv();
  CHECK(csv.rfind("communication,edge,rows,bytes,seconds,cumulative_bytes\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}
