#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "dinf/sim/time.hpp"
#include "dinf/tensor/transformer.hpp"

namespace dinf::tensor {

// Compute capability of one simulated device. Region multipliers let a
// particular kernel or code region run slower than the rest.
struct DeviceProfile {
  double throughput_flops = 1e12;
  double slowdown = 1.0;
  std::map<std::string, double, std::less<>> region_slowdowns;

  double multiplier(std::string_view region) const;
  void validate() const;
  friend bool operator==(const DeviceProfile&, const DeviceProfile&) = default;
};

// flops / throughput * slowdown * region multiplier, rounded half-up to ns.
SimTime modeled_cost(double flops, std::string_view region, const DeviceProfile& profile);

// Prefill time a*L^2 + b*L + c and decode-step time d1*C + d0 for context C.
// In Seconds mode the coefficients are seconds and only profile multipliers
// apply; in FlopAnalytic mode they are FLOP counts divided by throughput.
struct CostModel {
  enum class Mode { Seconds, FlopAnalytic };
  Mode mode = Mode::Seconds;
  double a = 0.0, b = 0.0, c = 0.0;
  double decode_per_context = 0.0, decode_base = 0.0;

  // Coefficients that match the FLOPs charged by the reference forward pass.
  static CostModel flop_analytic(const TransformerConfig& config);
  void validate() const;
};

SimTime prefill_cost(std::size_t prompt_len, const CostModel& cost, const DeviceProfile& profile);
SimTime decode_step_cost(std::size_t context_len, const CostModel& cost, const DeviceProfile& profile);

}  // namespace dinf::tensor
