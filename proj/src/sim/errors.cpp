#include "dinf/sim/errors.hpp"

#include <sstream>

namespace dinf {

namespace {

std::string deadlock_message(const std::vector<ProcessId>& blocked, SimTime at) {
  std::ostringstream os;
  os << "deadlock at " << at << ": blocked processes {";
  for (std::size_t i = 0; i < blocked.size(); ++i) os << (i ? "," : "") << blocked[i];
  os << "}";
  return os.str();
}

std::string device_message(ProcessId device, SimTime clock, const std::string& what) {
  std::ostringstream os;
  os << "device " << device << " failed at " << clock << ": " << what;
  return os.str();
}

}  // namespace

DeadlockError::DeadlockError(std::vector<ProcessId> blocked, SimTime at)
    : std::runtime_error(deadlock_message(blocked, at)), blocked_(std::move(blocked)), at_(at) {}

DeviceError::DeviceError(ProcessId device, SimTime clock, const std::string& what, Cause cause)
    : std::runtime_error(device_message(device, clock, what)),
      device_(device),
      clock_(clock),
      cause_(cause) {}

}  // namespace dinf
