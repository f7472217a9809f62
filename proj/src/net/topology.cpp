#include "dinf/net/topology.hpp"

#include <cmath>
#include <sstream>

#include "dinf/sim/errors.hpp"

namespace dinf::net {

void LinkParams::validate() const {
  if (!(latency_s >= 0.0) || !std::isfinite(latency_s)) {
    throw ConfigError("link latency must be finite and >= 0");
  }
  if (!(bandwidth_bytes_per_s > 0.0) || !std::isfinite(bandwidth_bytes_per_s)) {
    throw ConfigError("link bandwidth must be finite and > 0");
  }
}

const LinkParams& NetworkTopology::link(ProcessId src, ProcessId dst) const {
  if (mode == TopologyMode::PerPairLinks) {
    auto it = overrides.find({static_cast<std::uint32_t>(src), static_cast<std::uint32_t>(dst)});
    if (it != overrides.end()) return it->second;
  }
  return default_link;
}

void NetworkTopology::validate(std::size_t n_devices) const {
  default_link.validate();
  if (mode == TopologyMode::SharedMedium && !overrides.empty()) {
    throw ConfigError("topology: per-pair overrides are not allowed on a shared medium");
  }
  for (const auto& [pair, params] : overrides) {
    if (pair.first >= n_devices || pair.second >= n_devices || pair.first == pair.second) {
      std::ostringstream os;
      os << "topology: override for invalid pair (" << pair.first << ", " << pair.second << ")";
      throw ConfigError(os.str());
    }
    params.validate();
  }
}

}  // namespace dinf::net
