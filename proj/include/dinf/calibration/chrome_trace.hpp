#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "dinf/sim/trace.hpp"

namespace dinf::calibration {

// {"traceEvents": [{name, cat, ph: "X", ts, dur, pid, tid, args}, ...]}
// with ts and dur in microseconds of simulated time.
std::string chrome_trace_json(std::span<const TraceEvent> events);

// Throws std::runtime_error when the file cannot be written.
void export_chrome_trace(std::span<const TraceEvent> events, const std::filesystem::path& path);

// Structural problems: negative durations, spans past `end`, or spans on one
// (pid, tid) lane that partially overlap. Empty when the trace is valid.
std::vector<std::string> check_trace(std::span<const TraceEvent> events, SimTime end);

}  // namespace dinf::calibration
