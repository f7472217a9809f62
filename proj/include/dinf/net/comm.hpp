#pragma once

#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "dinf/sim/time.hpp"

namespace dinf::net {

enum class CommKind { Send, Recv, Broadcast, AllGather, AllReduce };
enum class ReduceOp { Sum, Max };

std::string_view to_string(CommKind kind);

// Bytes on the wire plus, optionally, the float data those bytes carry.
// Byte-only payloads model traffic without moving values.
struct Payload {
  std::uint64_t bytes = 0;
  std::vector<float> data;

  static Payload of_bytes(std::uint64_t bytes) { return {bytes, {}}; }
  static Payload of(std::vector<float> data) {
    const auto n = static_cast<std::uint64_t>(data.size()) * sizeof(float);
    return {n, std::move(data)};
  }
};

struct CommHandle {
  std::uint64_t id = 0;
  friend bool operator==(CommHandle, CommHandle) = default;
};

// Participants in ring order. Rank r sends to rank (r + 1) % n.
using Group = std::vector<ProcessId>;

Group make_group(std::size_t first, std::size_t count);

struct CollectiveSpec {
  CommKind kind = CommKind::Send;
  std::uint64_t n = 1;
  std::uint64_t m = 0;
  std::optional<ProcessId> root;
};

// Total bytes a collective puts on the wire:
//   Broadcast (N-1)M, AllGather N(N-1)M, AllReduce 2(N-1)M, Send/Recv M.
std::uint64_t collective_traffic(const CollectiveSpec& spec);

// Hop count used for latency accounting: N-1, N-1, 2(N-1), 1, 1.
std::uint64_t collective_hops(const CollectiveSpec& spec);

}  // namespace dinf::net
