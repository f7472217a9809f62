#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dinf/sim/time.hpp"

namespace dinf {

// One complete ("X") span on the simulated timeline.
struct TraceEvent {
  std::string name;
  std::string category;
  SimTime start;
  SimTime end;
  std::uint32_t pid = 0;
  std::uint32_t tid = 0;
  std::vector<std::pair<std::string, std::string>> args;

  SimTime duration() const { return end - start; }
  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

inline constexpr std::uint32_t kComputeLane = 0;
inline constexpr std::uint32_t kNetworkLane = 1;

}  // namespace dinf
