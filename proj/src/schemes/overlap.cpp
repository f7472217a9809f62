#include "dinf/schemes/overlap.hpp"

#include <algorithm>
#include <cmath>

#include "dinf/sim/errors.hpp"

namespace dinf::schemes {

OverlapEstimate estimate_overlap_gain(double t_transfer, double t_xwq) {
  if (!(t_transfer >= 0.0) || !(t_xwq >= 0.0)) {
    throw ContractViolation("estimate_overlap_gain: durations must be non-negative");
  }
  return {t_transfer, t_xwq, std::max(0.0, t_transfer - t_xwq), std::min(t_transfer, t_xwq)};
}

LayerTimings modeled_layer_timings(const tensor::TransformerConfig& config, std::size_t seq_len,
                                   std::size_t n, const net::NetworkTopology& topology,
                                   const tensor::DeviceProfile& profile) {
  if (n == 0 || seq_len % n != 0) {
    throw ConfigError("modeled_layer_timings: sequence must split evenly across devices");
  }
  const auto slice = seq_len / n;
  const double d = static_cast<double>(config.d_model);
  LayerTimings out;
  out.xwq = tensor::modeled_cost(2.0 * static_cast<double>(slice) * d * d, "xWq", profile);
  if (n == 1) return out;

  // Every ring step moves one slice per device at once; on a shared medium
  // the n flows split the bandwidth, on per-pair links each has its own.
  // Mirrors the network's drain arithmetic so the result is exact in ns.
  const auto bytes = static_cast<double>(slice * config.d_model * sizeof(float));
  const auto& link = topology.default_link;
  if (topology.mode == net::TopologyMode::PerPairLinks && !topology.overrides.empty()) {
    throw ConfigError("modeled_layer_timings: per-pair overrides are not supported");
  }
  const double share = topology.mode == net::TopologyMode::SharedMedium
                           ? link.bandwidth_bytes_per_s / static_cast<double>(n)
                           : link.bandwidth_bytes_per_s;
  const auto drain = SimTime::from_ns(static_cast<std::int64_t>(std::floor(bytes / share * 1e9 + 0.5)));
  const auto step = drain + link.latency();
  for (std::size_t k = 0; k + 1 < n; ++k) out.transfer += step;
  return out;
}

}  // namespace dinf::schemes
