#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dinf {

// Independent named random substream derived from one experiment seed, so
// that e.g. changing the arrival process never perturbs weight init.
inline std::mt19937_64 substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char ch : name) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
  return std::mt19937_64(seq);
}

// Uniform in [0, 1). Bit-reproducible across standard libraries, unlike
// std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace dinf
