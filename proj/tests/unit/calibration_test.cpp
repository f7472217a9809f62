#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "dinf/calibration/calibration.hpp"
#include "dinf/calibration/chrome_trace.hpp"
#include "dinf/schemes/schemes.hpp"
#include "json.hpp"
#include "test_support.hpp"

using namespace dinf;
using namespace dinf::calibration;

namespace {

double rel(double got, double want) { return std::abs(got - want) / std::abs(want); }

}  // namespace

TEST(RidgeFit, NoiselessRecovery) {
  const auto ms = fixture::synthetic_measurements(1e-3, 1.25e8, 35, 5, 0.0, 1);
  const auto fit = fit_link_params(ms, {1e-9, true});
  EXPECT_LE(rel(fit.alpha, 1e-3), 1e-3);
  EXPECT_LE(rel(fit.bandwidth(), 1.25e8), 1e-3);
  EXPECT_GE(evaluate_fit(fit, ms).r2, 1.0 - 1e-9);
}

TEST(RidgeFit, RoundTripAcrossParameterRange) {
  for (double alpha : {0.0, 1e-6, 1e-3, 5e-2}) {
    for (double bw : {1e6, 1e8, 1e10}) {
      for (std::uint64_t hops : {1u, 6u}) {
        const auto ms = fixture::synthetic_measurements(alpha, bw, 5, 1, 0.0, 2, hops);
        const auto fit = fit_link_params(ms, {1e-9, true});
        EXPECT_LE(std::abs(fit.alpha - alpha), 1e-3 * alpha + 1e-12) << alpha << " " << bw;
        EXPECT_LE(rel(fit.bandwidth(), bw), 1e-3) << alpha << " " << bw;
      }
    }
  }
}

TEST(RidgeFit, NoisyRecovery) {
  const auto ms = fixture::synthetic_measurements(1e-3, 1.25e8, 35, 5, 0.01, 3);
  const auto fit = fit_link_params(ms);
  const auto report = evaluate_fit(fit, ms);
  EXPECT_LE(rel(fit.alpha, 1e-3), 0.05);
  EXPECT_LE(rel(fit.bandwidth(), 1.25e8), 0.05);
  EXPECT_GE(report.r2, 0.99);
  EXPECT_LE(report.mape, 0.03);
}

TEST(RidgeFit, TwoPointsInterpolateExactlyWithoutPenalty) {
  // t = 2 ms + bytes * 1e-6 s
  const std::vector<Measurement> ms{{1000, 1, 3e-3, 0}, {5000, 1, 7e-3, 0}};
  for (bool weighted : {true, false}) {
    const auto fit = fit_link_params(ms, {0.0, weighted});
    EXPECT_NEAR(fit.alpha, 2e-3, 1e-15);
    EXPECT_NEAR(fit.inv_bandwidth, 1e-6, 1e-18);
  }
}

TEST(RidgeFit, SingleSizeIsDegenerate) {
  const auto ms = fixture::synthetic_measurements(1e-3, 1e8, 1, 5, 0.01, 4);
  EXPECT_THROW(fit_link_params(ms), FitError);
  EXPECT_THROW(fit_link_params({}), FitError);
}

TEST(RidgeFit, NegativeCoefficientsAreClamped) {
  // Larger transfers finishing sooner would need negative inverse bandwidth.
  const std::vector<Measurement> shrinking{{100, 1, 5e-3, 0}, {1000, 1, 4e-3, 0}, {10000, 1, 3e-3, 0}};
  EXPECT_EQ(fit_link_params(shrinking).inv_bandwidth, kMinInvBandwidth);
  // A line through the origin minus an offset needs negative latency.
  const std::vector<Measurement> offset{{1000, 1, 0.5e-3, 0}, {2000, 1, 1.5e-3, 0}};
  const auto fit = fit_link_params(offset, {0.0, false});
  EXPECT_EQ(fit.alpha, 0.0);
  EXPECT_GT(fit.inv_bandwidth, 0.0);
}

TEST(RidgeFit, RejectsInvalidMeasurements) {
  EXPECT_THROW(fit_link_params(std::vector<Measurement>{{1, 0, 1.0, 0}, {2, 1, 1.0, 0}}), FitError);
  EXPECT_THROW(fit_link_params(std::vector<Measurement>{{1, 1, 0.0, 0}, {2, 1, 1.0, 0}}), FitError);
  EXPECT_THROW(fit_link_params(fixture::synthetic_measurements(1e-3, 1e8, 5, 1, 0, 1), {-1.0, true}), FitError);
}

TEST(RidgeFit, HopFeaturesServeCollectives) {
  // All-reduce over 4 nodes: 2(N-1) hops of M/N bytes each.
  auto ms = fixture::synthetic_measurements(2e-4, 5e8, 10, 2, 0.0, 5, 6);
  const auto p2p = fixture::synthetic_measurements(2e-4, 5e8, 10, 2, 0.0, 6, 1);
  ms.insert(ms.end(), p2p.begin(), p2p.end());
  const auto fit = fit_link_params(ms);
  EXPECT_LE(rel(fit.alpha, 2e-4), 1e-3);
  EXPECT_LE(rel(fit.bandwidth(), 5e8), 1e-3);
}

TEST(PredictTime, Formula) {
  const RidgeFit fit{1e-3, 1.0 / 1.25e8, 0.0};
  EXPECT_DOUBLE_EQ(predict_time(fit, 0, 3), 3e-3);
  EXPECT_NEAR(predict_time(fit, 1000000, 1), 9e-3, 1e-15);
  EXPECT_NEAR(predict_time(fit, 25, 6), 6e-3 + 6 * 25 / 1.25e8, 1e-15);
}

TEST(PredictTime, UncontendedSendMatchesSimulation) {
  const auto fit = fit_link_params(fixture::synthetic_measurements(3.3e-4, 7.7e7, 8, 1, 0.0, 7));
  for (std::uint64_t bytes : {0ull, 1ull, 4096ull, 1234567ull}) {
    sim::Engine engine(net::NetworkTopology::per_pair(fit.link()));
    SimTime arrived;
    engine.register_device([&](sim::Device& d) -> Task<void> {
      co_await d.send(process_id(1), net::Payload::of_bytes(bytes));
    });
    engine.register_device([&](sim::Device& d) -> Task<void> {
      co_await d.recv(process_id(0));
      arrived = d.now();
    });
    engine.run_until_complete();
    EXPECT_LE(std::llabs(arrived.ns() - SimTime::from_seconds(predict_time(fit, bytes, 1)).ns()), 1) << bytes;
  }
}

TEST(Metrics, PerfectPrediction) {
  const std::vector<double> o{1, 2, 3};
  EXPECT_EQ(compute_r2(o, o), 1.0);
  EXPECT_EQ(compute_mape(o, o), 0.0);
}

TEST(Metrics, MeanPredictionHasZeroR2) {
  const std::vector<double> o{1, 2, 6}, p{3, 3, 3};
  EXPECT_NEAR(compute_r2(o, p), 0.0, 1e-15);
}

TEST(Metrics, HandComputedMape) {
  const std::vector<double> o{1, 2, 4}, p{1.1, 1.8, 4.4};
  EXPECT_NEAR(compute_mape(o, p), 0.1, 1e-12);
}

TEST(Metrics, ZeroObservationsExcludedAndCounted) {
  const std::vector<double> o{0, 2, 4, 0}, p{1, 1.8, 4.4, 0};
  std::size_t excluded = 0;
  EXPECT_NEAR(compute_mape(o, p, &excluded), 0.1, 1e-12);
  EXPECT_EQ(excluded, 2u);
}

TEST(Metrics, Invariances) {
  const std::vector<double> o{1.0, 2.5, 3.0, 7.0}, p{1.2, 2.0, 3.3, 6.1};
  std::vector<double> so, sp, ao, ap;
  for (std::size_t i = 0; i < o.size(); ++i) {
    so.push_back(o[i] * 37.0);
    sp.push_back(p[i] * 37.0);
    ao.push_back(o[i] * 3.0 + 11.0);
    ap.push_back(p[i] * 3.0 + 11.0);
  }
  EXPECT_NEAR(compute_mape(so, sp), compute_mape(o, p), 1e-12);
  EXPECT_NEAR(compute_r2(ao, ap), compute_r2(o, p), 1e-12);
  EXPECT_LE(compute_r2(o, p), 1.0);
}

TEST(Metrics, MismatchedSeriesViolateContract) {
  const std::vector<double> a{1, 2}, b{1};
  EXPECT_THROW(compute_r2(a, b), ContractViolation);
  EXPECT_THROW(compute_mape({}, {}), ContractViolation);
}

TEST(Measurements, CsvRoundTrip) {
  const auto ms = fixture::synthetic_measurements(1e-3, 1e8, 4, 2, 0.01, 8);
  std::stringstream ss;
  write_measurements(ss, ms);
  const auto back = read_measurements(ss);
  ASSERT_EQ(back.size(), ms.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    EXPECT_EQ(back[i].bytes, ms[i].bytes);
    EXPECT_EQ(back[i].observed_seconds, ms[i].observed_seconds);
    EXPECT_EQ(back[i].repeat, ms[i].repeat);
  }
}

TEST(Measurements, MalformedInputRejected) {
  std::stringstream no_header("1,1,0.1,0\n");
  EXPECT_THROW(read_measurements(no_header), ConfigError);
  std::stringstream bad("bytes,hops,observed_seconds,repeat\n10,1,abc,0\n");
  EXPECT_THROW(read_measurements(bad), ConfigError);
  std::stringstream zero_hops("bytes,hops,observed_seconds,repeat\n10,0,0.1,0\n");
  EXPECT_THROW(read_measurements(zero_hops), ConfigError);
  EXPECT_THROW(read_measurements(std::filesystem::path("/nonexistent/m.csv")), ConfigError);
}

TEST(FitFile, LinkRoundTrip) {
  const RidgeFit fit{2.5e-3, 1.0 / 3e7, 1e-9};
  const auto path = std::filesystem::temp_directory_path() / "dinf_fit_rt.json";
  write_fit_file(path, fit, FitReport{});
  const auto link = read_fit_link(path);
  EXPECT_EQ(link.latency_s, fit.alpha);
  EXPECT_DOUBLE_EQ(link.bandwidth_bytes_per_s, 3e7);
}

TEST(ChromeTrace, EmptyRun) {
  const auto doc = nlohmann::json::parse(chrome_trace_json({}));
  EXPECT_EQ(doc, nlohmann::json::parse(R"({"traceEvents": []})"));
}

TEST(ChromeTrace, FieldMapping) {
  const std::vector<TraceEvent> ev{
      {"all_gather", "network", SimTime::from_us(10), SimTime::from_us(250), 1, 0, {{"bytes", "12"}}}};
  const auto doc = nlohmann::json::parse(chrome_trace_json(ev));
  ASSERT_EQ(doc["traceEvents"].size(), 1u);
  const auto& e = doc["traceEvents"][0];
  EXPECT_EQ(e["name"], "all_gather");
  EXPECT_EQ(e["cat"], "network");
  EXPECT_EQ(e["ph"], "X");
  EXPECT_EQ(e["ts"].get<double>(), 10.0);
  EXPECT_EQ(e["dur"].get<double>(), 240.0);
  EXPECT_EQ(e["pid"], 1);
  EXPECT_EQ(e["tid"], 0);
  EXPECT_EQ(e["args"]["bytes"], "12");
}

TEST(ChromeTrace, SubMicrosecondPrecisionKept) {
  const std::vector<TraceEvent> ev{{"x", "compute", SimTime::from_ns(1), SimTime::from_ns(1500), 0, 0, {}}};
  const auto e = nlohmann::json::parse(chrome_trace_json(ev))["traceEvents"][0];
  EXPECT_EQ(e["ts"].get<double>(), 0.001);
  EXPECT_EQ(e["dur"].get<double>(), 1.499);
}

TEST(ChromeTrace, UnwritablePathThrows) {
  EXPECT_THROW(export_chrome_trace({}, "/nonexistent/dir/trace.json"), std::runtime_error);
}

TEST(ChromeTrace, CheckTraceFindsPartialOverlap) {
  const auto us = [](int v) { return SimTime::from_us(v); };
  std::vector<TraceEvent> ev{{"layer", "compute", us(0), us(10), 0, 0, {}},
                             {"inner", "compute", us(2), us(5), 0, 0, {}},
                             {"other_lane", "network", us(3), us(12), 0, 1, {}}};
  EXPECT_TRUE(check_trace(ev, us(12)).empty());
  ev.push_back({"straddle", "compute", us(8), us(11), 0, 0, {}});
  EXPECT_EQ(check_trace(ev, us(12)).size(), 1u);
  EXPECT_EQ(check_trace(ev, us(11)).size(), 2u);
}

namespace {

bool compute_overlaps_network(const std::vector<TraceEvent>& trace) {
  for (const auto& c : trace) {
    if (c.category != "compute" || c.duration() == SimTime{}) continue;
    for (const auto& n : trace) {
      if (n.category == "network" && n.pid == c.pid && n.start < c.end && c.start < n.end) return true;
    }
  }
  return false;
}

}  // namespace

TEST(ChromeTrace, KilovoltsOverlapsProjectionWithGather) {
  tensor::TransformerConfig cfg;
  const auto w = tensor::init_weights(cfg, 1);
  std::vector<int> tokens(16);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens[i] = static_cast<int>(i * 7 % cfg.vocab_size);
  const schemes::RunSetup setup{fixture::per_pair(1e-3, 1e7), {}, {}};
  auto run = [&](schemes::SchemeKind kind) {
    return schemes::run_scheme(schemes::make_plan({kind, 4, 0, 0, 1, 16}, cfg), cfg, w, {{tokens}, 0}, setup);
  };
  const auto v = run(schemes::SchemeKind::Voltage);
  const auto k = run(schemes::SchemeKind::Kilovolts);
  EXPECT_FALSE(compute_overlaps_network(v.trace));
  EXPECT_TRUE(compute_overlaps_network(k.trace));
  EXPECT_TRUE(check_trace(v.trace, v.report.end_time).empty());
  EXPECT_TRUE(check_trace(k.trace, k.report.end_time).empty());
  bool xwq_overlap = false;
  for (const auto& c : k.trace) {
    if (c.name != "xWq") continue;
    for (const auto& n : k.trace) {
      if (n.name == "all_gather" && n.pid == c.pid && n.start < c.end && c.start < n.end) xwq_overlap = true;
    }
  }
  EXPECT_TRUE(xwq_overlap);
}
