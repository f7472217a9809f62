#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "dinf/calibration/calibration.hpp"
#include "dinf/net/topology.hpp"
#include "dinf/sim/engine.hpp"

namespace dinf::fixture {

inline net::NetworkTopology per_pair(double latency_s, double bandwidth) {
  return net::NetworkTopology::per_pair({latency_s, bandwidth});
}

inline net::NetworkTopology shared(double latency_s, double bandwidth) {
  return net::NetworkTopology::shared({latency_s, bandwidth});
}

// Registers the same program on `n` devices and runs to completion.
inline sim::RunReport run_all(sim::Engine& engine, std::size_t n, const sim::Program& program) {
  for (std::size_t i = 0; i < n; ++i) engine.register_device(program);
  return engine.run_until_complete();
}

// `sizes` byte counts spaced log-uniformly over [1, max_bytes], each measured
// `repeats` times as alpha*hops + hops*bytes/bandwidth scaled by (1 + noise*N(0,1)).
inline std::vector<calibration::Measurement> synthetic_measurements(double alpha, double bandwidth,
                                                                    std::size_t sizes, std::size_t repeats,
                                                                    double noise, std::uint64_t seed,
                                                                    std::uint64_t hops = 1,
                                                                    double max_bytes = 2e8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<calibration::Measurement> out;
  for (std::size_t i = 0; i < sizes; ++i) {
    const double frac = sizes == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(sizes - 1);
    const auto bytes = static_cast<std::uint64_t>(std::llround(std::pow(max_bytes, frac)));
    for (std::size_t r = 0; r < repeats; ++r) {
      const double h = static_cast<double>(hops);
      const double clean = alpha * h + h * static_cast<double>(bytes) / bandwidth;
      out.push_back({bytes, hops, clean * (1.0 + noise * gauss(rng)), static_cast<int>(r)});
    }
  }
  return out;
}

}  // namespace dinf::fixture
