#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dinf/harness/config.hpp"
#include "dinf/sim/engine.hpp"
#include "dinf/sim/errors.hpp"
#include "json.hpp"

namespace dinf::harness {

struct RunOptions {
  bool record_trace = true;
  bool record_events = false;
  bool check_oracle = true;  // compare logits and tokens with the single-device reference
};

struct ExperimentResult {
  std::string scheme;
  sim::RunReport report;
  std::vector<TraceEvent> trace;
  std::vector<sim::CommittedEvent> events;
  std::vector<std::vector<int>> generated;
  std::optional<double> oracle_max_relative_error;
  std::optional<bool> generation_matches_oracle;
};

// Validates and runs one configuration. Throws ConfigError, DeadlockError,
// DeviceError or NumericalError.
ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options = {});

nlohmann::ordered_json report_json(const ExperimentResult& result);
// Report written when a run deadlocks: status plus the blocked device set.
nlohmann::ordered_json deadlock_report_json(const std::string& scheme, const DeadlockError& error);
std::string format_report(const ExperimentResult& result);

// One axis of a sweep. Keys: bandwidth_mbps, latency_ms, n_devices,
// prompt_length, scheme, or any dotted config path (e.g. model.n_layers).
struct SweepAxis {
  std::string key;
  std::vector<std::string> values;
};

// Parses "key=v1,v2,...". Throws ConfigError.
SweepAxis parse_axis(const std::string& text);

struct SweepCell {
  std::vector<std::string> values;  // one per non-scheme axis, in axis order
  std::vector<std::string> schemes;
  std::vector<std::optional<double>> seconds;  // per scheme; empty on failure
  std::vector<std::string> errors;             // per scheme; empty on success
  std::optional<double> speedup;               // t(first) / t(second) - 1 with two schemes
};

struct SweepResult {
  std::vector<std::string> axis_keys;  // non-scheme axes
  std::vector<std::string> schemes;
  std::vector<SweepCell> cells;  // sorted by axis values
};

// Cartesian product of the axes applied to `base`. Failed cells are recorded
// and the sweep carries on.
SweepResult run_sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes);
std::string sweep_csv(const SweepResult& result);

// Applies one axis value to a config (through its JSON form) and revalidates.
ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& key, const std::string& value);

}  // namespace dinf::harness
