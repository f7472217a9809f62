#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "dinf/sim/time.hpp"

namespace dinf {

// Invalid user-supplied configuration (plans, topologies, collective calls).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an API precondition (negative durations, rewriting a completion).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite value produced by a tensor operation.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(std::string op)
      : std::runtime_error("non-finite value produced by " + op), op_(std::move(op)) {}
  const std::string& op() const { return op_; }

 private:
  std::string op_;
};

class DeadlockError : public std::runtime_error {
 public:
  DeadlockError(std::vector<ProcessId> blocked, SimTime at);
  const std::vector<ProcessId>& blocked() const { return blocked_; }
  SimTime at() const { return at_; }

 private:
  std::vector<ProcessId> blocked_;
  SimTime at_;
};

// A device program raised; wraps the original message with device and clock.
class DeviceError : public std::runtime_error {
 public:
  enum class Cause { Config, Numerical, Other };

  DeviceError(ProcessId device, SimTime clock, const std::string& what, Cause cause);
  ProcessId device() const { return device_; }
  SimTime clock() const { return clock_; }
  Cause cause() const { return cause_; }

 private:
  ProcessId device_;
  SimTime clock_;
  Cause cause_;
};

}  // namespace dinf
