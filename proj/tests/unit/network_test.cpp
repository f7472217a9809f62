#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "dinf/net/comm.hpp"
#include "dinf/net/network.hpp"
#include "dinf/sim/engine.hpp"
#include "dinf/sim/errors.hpp"
#include "test_support.hpp"

using namespace dinf;
using dinf::net::CommKind;
using dinf::net::Payload;
using dinf::sim::Device;
using dinf::sim::Engine;

namespace {

ProcessId pid(std::size_t i) { return process_id(i); }

// Runs one collective of `kind` over n devices with m-byte contributions and
// returns the engine's report plus per-device completion clocks.
struct CollectiveRun {
  sim::RunReport report;
  std::vector<SimTime> clocks;
  std::vector<Payload> results;
};

CollectiveRun run_collective(CommKind kind, std::size_t n, std::uint64_t m,
                             net::NetworkTopology topo, std::vector<std::vector<float>> data = {}) {
  Engine engine(std::move(topo));
  CollectiveRun out;
  out.clocks.resize(n);
  out.results.resize(n);
  const auto group = net::make_group(0, n);
  for (std::size_t i = 0; i < n; ++i) {
    engine.register_device([&, i](Device& d) -> Task<void> {
      Payload p = data.empty() ? Payload::of_bytes(m) : Payload::of(data[i]);
      if (kind == CommKind::Broadcast && i != 0) p = Payload{};
      switch (kind) {
        case CommKind::Broadcast:
          out.results[i] = co_await d.broadcast(group, pid(0), std::move(p));
          break;
        case CommKind::AllGather:
          out.results[i] = co_await d.all_gather(group, std::move(p));
          break;
        case CommKind::AllReduce:
          out.results[i] = co_await d.all_reduce(group, std::move(p));
          break;
        default:
          break;
      }
      out.clocks[i] = d.now();
    });
  }
  out.report = engine.run_until_complete();
  return out;
}

}  // namespace

TEST(PointToPoint, UncontendedDeliveryIsLatencyPlusSerialization) {
  Engine engine(fixture::per_pair(1e-3, 1.25e8));
  SimTime recv_done, send_done;
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.send(pid(1), Payload::of_bytes(1000000));
    send_done = d.now();
  });
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.recv(pid(0));
    recv_done = d.now();
  });
  engine.run_until_complete();
  EXPECT_EQ(send_done, SimTime::from_ms(8));
  EXPECT_EQ(recv_done, SimTime::from_ms(9));
}

TEST(PointToPoint, ZeroBytesCostOnlyLatency) {
  Engine engine(fixture::per_pair(1e-3, 1.25e8));
  SimTime recv_done;
  engine.register_device([&](Device& d) -> Task<void> { co_await d.send(pid(1), Payload{}); });
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.recv(pid(0));
    recv_done = d.now();
  });
  engine.run_until_complete();
  EXPECT_EQ(recv_done, SimTime::from_ms(1));
}

TEST(PointToPoint, LateRecvCompletesAtCallTime) {
  Engine engine(fixture::per_pair(1e-3, 1e9));
  SimTime recv_done;
  engine.register_device([&](Device& d) -> Task<void> { co_await d.send(pid(1), Payload::of_bytes(10)); });
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.yield(SimTime::from_ms(50));
    co_await d.recv(pid(0));
    recv_done = d.now();
  });
  engine.run_until_complete();
  EXPECT_EQ(recv_done, SimTime::from_ms(50));
}

TEST(PointToPoint, FifoPerPair) {
  Engine engine(fixture::per_pair(0.0, 1e9));
  std::vector<float> got;
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.send(pid(1), Payload::of({1.0f}));
    co_await d.send(pid(1), Payload::of({2.0f}));
  });
  engine.register_device([&](Device& d) -> Task<void> {
    auto a = co_await d.recv(pid(0));
    co_await d.yield(SimTime::from_ms(1));
    auto b = co_await d.recv(pid(0));
    got = {a.data.at(0), b.data.at(0)};
  });
  engine.run_until_complete();
  EXPECT_EQ(got, (std::vector<float>{1.0f, 2.0f}));
}

TEST(PointToPoint, SelfSendAndUnknownPeerAreConfigErrors) {
  net::Network net(fixture::per_pair(0.0, 1.0), 2);
  EXPECT_THROW(net.post_send(pid(0), pid(0), Payload{}, SimTime{}), ConfigError);
  EXPECT_THROW(net.post_send(pid(0), pid(5), Payload{}, SimTime{}), ConfigError);
}

TEST(BandwidthSharing, TwoEqualFlowsOnSharedMediumFinishTogether) {
  // Each flow alone needs 8 ms; sharing doubles it.
  const double bw = 1.25e8;
  const std::uint64_t bytes = 1000000;
  Engine engine(fixture::shared(1e-3, bw));
  SimTime r2, r3;
  engine.register_device([&](Device& d) -> Task<void> {
    auto a = d.isend(pid(2), Payload::of_bytes(bytes));
    co_await d.wait(a);
  });
  engine.register_device([&](Device& d) -> Task<void> { co_await d.send(pid(3), Payload::of_bytes(bytes)); });
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.recv(pid(0));
    r2 = d.now();
  });
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.recv(pid(1));
    r3 = d.now();
  });
  engine.run_until_complete();
  EXPECT_EQ(r2, SimTime::from_ms(17));
  EXPECT_EQ(r3, SimTime::from_ms(17));
}

TEST(BandwidthSharing, PiecewiseIntegrationOfUnequalFlows) {
  net::Network net(fixture::shared(0.0, 1e8), 4);
  const auto a = net.post_send(pid(0), pid(1), Payload::of_bytes(100000000), SimTime{});
  const auto b = net.post_send(pid(2), pid(3), Payload::of_bytes(20000000), SimTime{});
  net.advance_to(SimTime{});
  auto flows = net.active_flows();
  ASSERT_EQ(flows.size(), 2u);
  for (const auto& f : flows) EXPECT_DOUBLE_EQ(f.rate, 5e7);
  while (auto t = net.next_event_time()) net.advance_to(*t);
  // Oracle: shared phase until B drains (2e7 / 5e7 s), then A alone at full rate.
  const double tb = 2e7 / 5e7;
  const double ta = tb + (1e8 - 5e7 * tb) / 1e8;
  EXPECT_EQ(*net.completion(b), SimTime::from_seconds(tb));
  EXPECT_EQ(*net.completion(a), SimTime::from_seconds(ta));
}

TEST(BandwidthSharing, WorkConservationAndSingleFlowRate) {
  net::Network net(fixture::shared(0.0, 1e8), 8);
  net.post_send(pid(0), pid(1), Payload::of_bytes(1000), SimTime{});
  net.advance_to(SimTime{});
  ASSERT_EQ(net.active_flows().size(), 1u);
  EXPECT_DOUBLE_EQ(net.active_flows()[0].rate, 1e8);
  for (std::size_t k = 1; k < 4; ++k) net.post_send(pid(2 * k), pid(2 * k + 1), Payload::of_bytes(1000 * (k + 1)), SimTime{});
  net.advance_to(SimTime{});
  while (!net.active_flows().empty()) {
    double sum = 0.0;
    for (const auto& f : net.active_flows()) {
      sum += f.rate;
      EXPECT_LE(f.rate, 1e8);
      EXPECT_LE(f.remaining_bytes, static_cast<double>(f.total_bytes));
    }
    EXPECT_NEAR(sum, 1e8, 1e-6);
    net.advance_to(*net.next_event_time());
  }
}

TEST(BandwidthSharing, KIdenticalFlowsEachTakeKTimesLonger) {
  for (std::size_t k : {1u, 2u, 3u, 5u}) {
    const double bw = 1e7;
    const std::uint64_t bytes = 10000;
    Engine engine(fixture::shared(2e-3, bw));
    std::vector<SimTime> done(k);
    for (std::size_t i = 0; i < k; ++i) {
      engine.register_device([&, i](Device& d) -> Task<void> { co_await d.send(pid(k + i), Payload::of_bytes(bytes)); });
    }
    for (std::size_t i = 0; i < k; ++i) {
      engine.register_device([&, i](Device& d) -> Task<void> {
        co_await d.recv(pid(i));
        done[i] = d.now();
      });
    }
    engine.run_until_complete();
    for (auto t : done) EXPECT_EQ(t, SimTime::from_seconds(2e-3 + static_cast<double>(k * bytes) / bw)) << k;
  }
}

TEST(Broadcast, StarOnSharedMediumSplitsBandwidth) {
  const double bw = 1e6;
  auto run = run_collective(CommKind::Broadcast, 3, 100, fixture::shared(1e-3, bw));
  EXPECT_EQ(run.report.total_network_bytes, 200u);
  EXPECT_EQ(run.clocks[1], SimTime::from_seconds(1e-3 + 200.0 / bw));
  EXPECT_EQ(run.clocks[2], SimTime::from_seconds(1e-3 + 200.0 / bw));
  // The root is done once both copies have left.
  EXPECT_EQ(run.clocks[0], SimTime::from_seconds(200.0 / bw));
}

TEST(Broadcast, SingleParticipantIsImmediate) {
  auto run = run_collective(CommKind::Broadcast, 1, 100, fixture::per_pair(1e-3, 1e6));
  EXPECT_EQ(run.report.total_network_bytes, 0u);
  EXPECT_EQ(run.clocks[0], SimTime{});
}

TEST(Broadcast, PeersReceiveRootData) {
  std::vector<std::vector<float>> data = {{1.5f, -2.0f}, {}, {}, {}};
  auto run = run_collective(CommKind::Broadcast, 4, 8, fixture::per_pair(0.0, 1e9), data);
  for (const auto& r : run.results) EXPECT_EQ(r.data, data[0]);
}

TEST(RingAllGather, StepSynchronousCompletion) {
  auto run = run_collective(CommKind::AllGather, 4, 1000000, fixture::per_pair(1e-3, 1e8));
  for (auto t : run.clocks) EXPECT_EQ(t, SimTime::from_ms(33));
  EXPECT_EQ(run.report.total_network_bytes, 4u * 3u * 1000000u);
}

TEST(RingAllGather, EveryNodeEndsWithAllShardsInRankOrder) {
  std::vector<std::vector<float>> data = {{0, 1}, {2, 3}, {4, 5}};
  auto run = run_collective(CommKind::AllGather, 3, 8, fixture::per_pair(1e-4, 1e6), data);
  for (const auto& r : run.results) EXPECT_EQ(r.data, (std::vector<float>{0, 1, 2, 3, 4, 5}));
}

TEST(RingAllGather, MismatchedShardsAreConfigErrors) {
  Engine engine(fixture::per_pair(0.0, 1e9));
  const auto g = net::make_group(0, 2);
  engine.register_device([&](Device& d) -> Task<void> { co_await d.all_gather(g, Payload::of_bytes(4)); });
  engine.register_device([&](Device& d) -> Task<void> { co_await d.all_gather(g, Payload::of_bytes(8)); });
  try {
    engine.run_until_complete();
    FAIL() << "expected a device error";
  } catch (const DeviceError& e) {
    EXPECT_EQ(e.cause(), DeviceError::Cause::Config);
  }
}

TEST(RingAllGather, LatencyOnlyLimit) {
  for (std::size_t n : {2u, 4u, 8u}) {
    auto run = run_collective(CommKind::AllGather, n, 1000000, fixture::per_pair(1e-3, 1e15));
    // Each step still drains 1 MB at 1e15 B/s, i.e. 1 ns.
    for (auto t : run.clocks) {
      EXPECT_LE(std::llabs(t.ns() - static_cast<long long>(n - 1) * 1000000), static_cast<long long>(n)) << n;
    }
  }
}

TEST(RingAllReduce, TwoNodeSum) {
  auto run = run_collective(CommKind::AllReduce, 2, 8, fixture::per_pair(1e-3, 1e6),
                            {{1.0f, 2.0f}, {3.0f, 4.0f}});
  for (const auto& r : run.results) EXPECT_EQ(r.data, (std::vector<float>{4.0f, 6.0f}));
}

TEST(RingAllReduce, SingleNodeLeavesBufferUnchanged) {
  auto run = run_collective(CommKind::AllReduce, 1, 12, fixture::per_pair(1e-3, 1e6), {{1, 2, 3}});
  EXPECT_EQ(run.results[0].data, (std::vector<float>{1, 2, 3}));
  EXPECT_EQ(run.report.network_operations, 1u);
  EXPECT_EQ(run.report.total_network_bytes, 0u);
}

TEST(RingAllReduce, IntegerPayloadsAreBitExact) {
  for (std::size_t n : {2u, 3u, 4u, 8u}) {
    std::vector<std::vector<float>> data(n);
    std::vector<float> expect(13, 0.0f);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t i = 0; i < 13; ++i) {
        data[r].push_back(static_cast<float>((r + 1) * (i + 3) % 17));
        expect[i] += data[r].back();
      }
    }
    auto run = run_collective(CommKind::AllReduce, n, 13 * 4, fixture::per_pair(1e-4, 1e7), data);
    for (const auto& r : run.results) EXPECT_EQ(r.data, expect) << n;
  }
}

TEST(RingAllReduce, FloatSumWithinRelativeTolerance) {
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (std::size_t n : {2u, 3u, 4u, 8u}) {
    std::vector<std::vector<float>> data(n, std::vector<float>(37));
    for (auto& v : data) for (auto& x : v) x = u(rng);
    std::vector<double> ref(37, 0.0);
    for (const auto& v : data) for (std::size_t i = 0; i < v.size(); ++i) ref[i] += v[i];
    auto run = run_collective(CommKind::AllReduce, n, 37 * 4, fixture::per_pair(1e-4, 1e7), data);
    const double scale = std::abs(*std::max_element(ref.begin(), ref.end(), [](double a, double b) {
      return std::abs(a) < std::abs(b);
    }));
    for (const auto& r : run.results) {
      ASSERT_EQ(r.data.size(), 37u);
      for (std::size_t i = 0; i < 37; ++i) EXPECT_LE(std::abs(r.data[i] - ref[i]) / scale, 1e-6);
    }
    // Every rank holds the same bits.
    for (const auto& r : run.results) EXPECT_EQ(r.data, run.results[0].data);
  }
}

TEST(RingAllReduce, MaxReduction) {
  Engine engine(fixture::per_pair(0.0, 1e9));
  const auto g = net::make_group(0, 3);
  std::vector<std::vector<float>> out(3);
  for (std::size_t i = 0; i < 3; ++i) {
    engine.register_device([&, i](Device& d) -> Task<void> {
      std::vector<float> v = {static_cast<float>(i), static_cast<float>(10 - i), 5.0f};
      out[i] = (co_await d.all_reduce(g, Payload::of(v), net::ReduceOp::Max)).data;
    });
  }
  engine.run_until_complete();
  for (const auto& v : out) EXPECT_EQ(v, (std::vector<float>{2.0f, 10.0f, 5.0f}));
}

TEST(CollectiveTraffic, TableFormulas) {
  using net::CollectiveSpec;
  EXPECT_EQ(net::collective_traffic({CommKind::Broadcast, 4, 100, pid(0)}), 300u);
  EXPECT_EQ(net::collective_traffic({CommKind::AllGather, 3, 300, {}}), 1800u);
  EXPECT_EQ(net::collective_traffic({CommKind::AllGather, 8, 10, {}}), 560u);
  EXPECT_EQ(net::collective_traffic({CommKind::AllReduce, 4, 100, {}}), 600u);
  EXPECT_EQ(net::collective_traffic({CommKind::AllReduce, 1, 100, {}}), 0u);
  EXPECT_EQ(net::collective_traffic({CommKind::Send, 5, 42, {}}), 42u);
  EXPECT_EQ(net::collective_hops({CommKind::AllReduce, 4, 100, {}}), 6u);
  EXPECT_EQ(net::collective_hops({CommKind::Broadcast, 4, 100, {}}), 3u);
  EXPECT_EQ(net::collective_hops({CommKind::Recv, 4, 100, {}}), 1u);
}

// Property: simulated per-link byte counters sum to the formula for every kind.
class TrafficConservation
    : public ::testing::TestWithParam<std::tuple<CommKind, std::size_t, std::uint64_t>> {};

TEST_P(TrafficConservation, LinkCountersMatchFormula) {
  const auto [kind, n, m] = GetParam();
  for (auto topo : {fixture::per_pair(1e-4, 1e9), fixture::shared(1e-4, 1e9)}) {
    auto run = run_collective(kind, n, m, topo);
    std::uint64_t sum = 0;
    for (const auto& [link, bytes] : run.report.link_bytes) sum += bytes;
    EXPECT_EQ(sum, net::collective_traffic({kind, n, m, pid(0)}));
    // Symmetric participants on uniform links finish together.
    if (kind != CommKind::Broadcast) {
      for (auto t : run.clocks) EXPECT_EQ(t, run.clocks[0]);
    }
  }
}

INSTANTIATE_TEST_SUITE_P(
    AllKinds, TrafficConservation,
    ::testing::Combine(::testing::Values(CommKind::Broadcast, CommKind::AllGather, CommKind::AllReduce),
                       ::testing::Values(2u, 3u, 4u, 8u),
                       ::testing::Values(std::uint64_t{1}, std::uint64_t{1000}, std::uint64_t{1000000})));

TEST(Network, CompletionIsWrittenOnce) {
  net::Network net(fixture::per_pair(0.0, 1e9), 2);
  std::vector<std::uint64_t> seen;
  net.set_on_complete([&](const net::CommRecord& r) { seen.push_back(r.handle.id); });
  const auto s = net.post_send(pid(0), pid(1), Payload::of_bytes(10), SimTime{});
  const auto r = net.post_recv(pid(1), pid(0), SimTime{});
  while (auto t = net.next_event_time()) net.advance_to(*t);
  std::sort(seen.begin(), seen.end());
  EXPECT_EQ(seen, (std::vector<std::uint64_t>{s.id, r.id}));
  EXPECT_TRUE(net.quiescent());
}

TEST(Network, PostingBeforeClockIsAContractViolation) {
  net::Network net(fixture::per_pair(0.0, 1e9), 2);
  net.advance_to(SimTime::from_ms(1));
  EXPECT_THROW(net.post_send(pid(0), pid(1), Payload{}, SimTime{}), ContractViolation);
}

TEST(Topology, ValidationRejectsBadLinks) {
  EXPECT_THROW(fixture::per_pair(-1.0, 1.0).validate(2), ConfigError);
  EXPECT_THROW(fixture::per_pair(0.0, 0.0).validate(2), ConfigError);
  auto topo = fixture::shared(0.0, 1.0);
  topo.overrides[{0, 1}] = {0.0, 2.0};
  EXPECT_THROW(topo.validate(2), ConfigError);
  auto pp = fixture::per_pair(0.0, 1.0);
  pp.overrides[{0, 3}] = {0.0, 2.0};
  EXPECT_THROW(pp.validate(2), ConfigError);
}

TEST(Topology, PerPairOverrideOnlyAffectsItsDirection) {
  auto topo = fixture::per_pair(1e-3, 1e6);
  topo.overrides[{0, 1}] = {5e-3, 1e6};
  Engine engine(topo);
  SimTime at1, at0;
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.send(pid(1), Payload{});
    co_await d.recv(pid(1));
    at0 = d.now();
  });
  engine.register_device([&](Device& d) -> Task<void> {
    co_await d.recv(pid(0));
    at1 = d.now();
    co_await d.send(pid(0), Payload{});
  });
  engine.run_until_complete();
  EXPECT_EQ(at1, SimTime::from_ms(5));
  EXPECT_EQ(at0, SimTime::from_ms(6));
}
