#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dinf/harness/config.hpp"
#include "dinf/sim/errors.hpp"
#include "json.hpp"

namespace dinf::harness {

class UnstableQueueError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

// Mean time in system for Poisson arrivals and deterministic service at rate
// mu. Throws UnstableQueueError when lambda >= mu.
double md1_baseline(double lambda, double mu);
// Mean time spent waiting before service starts.
double md1_wait(double lambda, double mu);

struct QueueResult {
  double service_seconds = 0.0;  // 1/mu for a lone request
  double mu = 0.0;
  double rho = 0.0;
  std::size_t arrivals = 0;
  std::size_t completed = 0;
  double mean_batch = 0.0;  // requests per iteration, averaged over iterations
  std::vector<double> waits;   // arrival to first iteration, per completed request
  std::vector<double> delays;  // arrival to completion

  bool steady = false;  // rho < 1; the statistics below are only filled then
  std::string warning;
  double mean_wait = 0.0, median_wait = 0.0, p95_wait = 0.0;
  double mean_delay = 0.0, median_delay = 0.0, p95_delay = 0.0;
  double md1_wait = 0.0, md1_sojourn = 0.0;
  double end_seconds = 0.0;
};

// Per-request service time derived from the model: prefill of the prompt
// plus one decode step per generated token, on device 0's profile.
double derived_service_seconds(const ExperimentConfig& config);

// Single server running in the engine. Requests arrive as a Poisson stream
// (the "arrivals" substream of the seed) until the horizon and each needs
// `iterations_per_request` iterations. An iteration over b requests costs
// base * (gamma + (1 - gamma) * b) with base = service / iterations. Without
// batching the server takes one request at a time; with continuous batching
// waiting requests join at every iteration boundary up to max_batch.
QueueResult run_poisson_batching(const QueueConfig& queue, const ExperimentConfig& config);

nlohmann::ordered_json queue_json(const QueueResult& result);
std::string format_queue(const QueueResult& result);

}  // namespace dinf::harness
