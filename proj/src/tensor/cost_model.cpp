#include "dinf/tensor/cost_model.hpp"

#include <cmath>

#include "dinf/sim/errors.hpp"

namespace dinf::tensor {

double DeviceProfile::multiplier(std::string_view region) const {
  auto it = region_slowdowns.find(region);
  return slowdown * (it == region_slowdowns.end() ? 1.0 : it->second);
}

void DeviceProfile::validate() const {
  if (!(throughput_flops > 0.0) || !std::isfinite(throughput_flops)) {
    throw ConfigError("profile.throughput_flops must be positive");
  }
  if (!(slowdown > 0.0) || !std::isfinite(slowdown)) throw ConfigError("profile.slowdown must be positive");
  for (const auto& [name, m] : region_slowdowns) {
    if (!(m > 0.0) || !std::isfinite(m)) {
      throw ConfigError("profile.regions." + name + " must be positive");
    }
  }
}

SimTime modeled_cost(double flops, std::string_view region, const DeviceProfile& profile) {
  if (!(flops >= 0.0)) throw ContractViolation("modeled_cost: negative flop count");
  return SimTime::from_seconds(flops / profile.throughput_flops * profile.multiplier(region));
}

CostModel CostModel::flop_analytic(const TransformerConfig& config) {
  config.validate();
  const double d = static_cast<double>(config.d_model);
  const double ff = static_cast<double>(config.d_ff);
  const double layers = static_cast<double>(config.n_layers);
  const double vocab = static_cast<double>(config.vocab_size);
  CostModel m;
  m.mode = Mode::FlopAnalytic;
  // Per layer: QKV+O projections 8Ld^2, scores and weighted values 4L^2 d,
  // feed-forward 4L d d_ff. Head: 2L d vocab.
  m.a = 4.0 * d * layers;
  m.b = layers * (8.0 * d * d + 4.0 * d * ff) + 2.0 * d * vocab;
  m.c = 0.0;
  m.decode_per_context = 4.0 * d * layers;
  m.decode_base = m.b;
  return m;
}

void CostModel::validate() const {
  if (a < 0 || b < 0 || c < 0 || decode_per_context < 0 || decode_base < 0) {
    throw ConfigError("cost model coefficients must be non-negative");
  }
}

namespace {

SimTime scale(double amount, const CostModel& cost, const DeviceProfile& profile,
              std::string_view region) {
  if (cost.mode == CostModel::Mode::FlopAnalytic) return modeled_cost(amount, region, profile);
  return SimTime::from_seconds(amount * profile.multiplier(region));
}

}  // namespace

SimTime prefill_cost(std::size_t prompt_len, const CostModel& cost, const DeviceProfile& profile) {
  if (prompt_len == 0) throw ContractViolation("prefill_cost: prompt length must be >= 1");
  const double l = static_cast<double>(prompt_len);
  return scale(cost.a * l * l + cost.b * l + cost.c, cost, profile, "prefill");
}

SimTime decode_step_cost(std::size_t context_len, const CostModel& cost, const DeviceProfile& profile) {
  const double ctx = static_cast<double>(context_len);
  return scale(cost.decode_per_context * ctx + cost.decode_base, cost, profile, "decode");
}

}  // namespace dinf::tensor
