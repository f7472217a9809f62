#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dinf/net/topology.hpp"
#include "dinf/tensor/cost_model.hpp"
#include "dinf/tensor/transformer.hpp"
#include "json.hpp"

namespace dinf::harness {

// One step of a hand-written device program ("script" scheme).
struct ScriptOp {
  enum class Kind { Compute, Yield, Send, Recv, Broadcast, AllGather, AllReduce };
  Kind kind = Kind::Compute;
  double seconds = 0.0;          // Compute, Yield
  std::uint32_t peer = 0;        // Send: destination, Recv: source
  std::uint32_t root = 0;        // Broadcast
  std::vector<std::uint32_t> group;
  std::uint64_t bytes = 0;
  friend bool operator==(const ScriptOp&, const ScriptOp&) = default;
};

struct QueueConfig {
  enum class Batching { None, Continuous };
  double arrival_rate = 0.5;           // requests per second
  double service_seconds = 0.0;        // 0 derives 1/mu from the compute model
  Batching batching = Batching::None;
  std::size_t max_batch = 8;
  double gamma = 0.5;                  // batch cost = base * (gamma + (1 - gamma) * b)
  std::size_t iterations_per_request = 8;
  double horizon_s = 2000.0;
  friend bool operator==(const QueueConfig&, const QueueConfig&) = default;
};

struct ExperimentConfig {
  std::string scheme = "tp";  // tp, pp, hybrid, voltage, kilovolts, script
  std::size_t n_devices = 1;
  std::size_t tp_degree = 0;
  std::size_t pp_stages = 0;
  std::size_t microbatches = 1;  // number of prompts
  std::size_t prompt_length = 16;
  std::size_t max_new_tokens = 0;
  std::uint64_t seed = 0;
  tensor::TransformerConfig model;
  std::string weights_file;  // prefix of a saved weight dump; empty initialises from seed
  net::NetworkTopology topology;
  tensor::DeviceProfile device;                // default for every device
  std::vector<tensor::DeviceProfile> devices;  // optional per-device profiles
  std::vector<std::vector<ScriptOp>> script;
  std::optional<QueueConfig> queue;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Throws ConfigError naming the offending field. Unknown keys are errors.
// Relative file references resolve against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const ExperimentConfig& config);

// Checks cross-field constraints (plan divisibility, profile positivity,
// topology, script references).
void validate(const ExperimentConfig& config);

std::vector<tensor::DeviceProfile> device_profiles(const ExperimentConfig& config);

// Deterministic prompts from the "prompts" substream of the seed.
std::vector<std::vector<int>> make_prompts(const ExperimentConfig& config);

}  // namespace dinf::harness
