#pragma once

#include <cstdint>
#include <map>
#include <utility>

#include "dinf/sim/time.hpp"

namespace dinf::net {

struct LinkParams {
  double latency_s = 0.0;
  double bandwidth_bytes_per_s = 1.0;

  void validate() const;
  SimTime latency() const { return SimTime::from_seconds(latency_s); }
  friend bool operator==(const LinkParams&, const LinkParams&) = default;
};

enum class TopologyMode { PerPairLinks, SharedMedium };

// SharedMedium: every byte from every device draws on one bandwidth pool.
// PerPairLinks: each directed (src, dst) pair is an independent link; pairs
// without an override use default_link.
struct NetworkTopology {
  TopologyMode mode = TopologyMode::PerPairLinks;
  LinkParams default_link;
  std::map<std::pair<std::uint32_t, std::uint32_t>, LinkParams> overrides;

  static NetworkTopology shared(LinkParams link) { return {TopologyMode::SharedMedium, link, {}}; }
  static NetworkTopology per_pair(LinkParams link) { return {TopologyMode::PerPairLinks, link, {}}; }

  const LinkParams& link(ProcessId src, ProcessId dst) const;
  void validate(std::size_t n_devices) const;
  friend bool operator==(const NetworkTopology&, const NetworkTopology&) = default;
};

}  // namespace dinf::net
