#include "dinf/net/comm.hpp"

#include "dinf/sim/errors.hpp"

namespace dinf::net {

std::string_view to_string(CommKind kind) {
  switch (kind) {
    case CommKind::Send: return "send";
    case CommKind::Recv: return "recv";
    case CommKind::Broadcast: return "broadcast";
    case CommKind::AllGather: return "all_gather";
    case CommKind::AllReduce: return "all_reduce";
  }
  return "unknown";
}

Group make_group(std::size_t first, std::size_t count) {
  Group g;
  g.reserve(count);
  for (std::size_t i = 0; i < count; ++i) g.push_back(process_id(first + i));
  return g;
}

std::uint64_t collective_traffic(const CollectiveSpec& spec) {
  if (spec.n < 1) throw ConfigError("collective: participant count must be >= 1");
  const std::uint64_t n = spec.n;
  const std::uint64_t m = spec.m;
  switch (spec.kind) {
    case CommKind::Broadcast: return (n - 1) * m;
    case CommKind::AllGather: return n * (n - 1) * m;
    case CommKind::AllReduce: return 2 * (n - 1) * m;
    case CommKind::Send:
    case CommKind::Recv: return m;
  }
  return 0;
}

std::uint64_t collective_hops(const CollectiveSpec& spec) {
  if (spec.n < 1) throw ConfigError("collective: participant count must be >= 1");
  switch (spec.kind) {
    case CommKind::Broadcast:
    case CommKind::AllGather: return spec.n - 1;
    case CommKind::AllReduce: return 2 * (spec.n - 1);
    case CommKind::Send:
    case CommKind::Recv: return 1;
  }
  return 0;
}

}  // namespace dinf::net
