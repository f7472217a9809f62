#include "dinf/calibration/chrome_trace.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include "json.hpp"

namespace dinf::calibration {

namespace {

double micros(SimTime t) { return static_cast<double>(t.ns()) / 1000.0; }

}  // namespace

std::string chrome_trace_json(std::span<const TraceEvent> events) {
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& e : events) {
    nlohmann::ordered_json args = nlohmann::ordered_json::object();
    for (const auto& [k, v] : e.args) args[k] = v;
    list.push_back({{"name", e.name},
                    {"cat", e.category},
                    {"ph", "X"},
                    {"ts", micros(e.start)},
                    {"dur", micros(e.duration())},
                    {"pid", e.pid},
                    {"tid", e.tid},
                    {"args", std::move(args)}});
  }
  nlohmann::ordered_json doc;
  doc["traceEvents"] = std::move(list);
  return doc.dump(1) + "\n";
}

void export_chrome_trace(std::span<const TraceEvent> events, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write trace file " + path.string());
  out << chrome_trace_json(events);
  if (!out) throw std::runtime_error("cannot write trace file " + path.string());
}

std::vector<std::string> check_trace(std::span<const TraceEvent> events, SimTime end) {
  std::vector<std::string> problems;
  std::map<std::pair<std::uint32_t, std::uint32_t>, std::vector<const TraceEvent*>> lanes;
  for (const auto& e : events) {
    if (e.end < e.start) problems.push_back(e.name + ": negative duration");
    if (e.end > end) problems.push_back(e.name + ": ends after the run");
    lanes[{e.pid, e.tid}].push_back(&e);
  }
  for (auto& [lane, spans] : lanes) {
    std::stable_sort(spans.begin(), spans.end(), [](const auto* a, const auto* b) {
      return a->start != b->start ? a->start < b->start : a->end > b->end;
    });
    std::vector<SimTime> open;
    for (const auto* s : spans) {
      while (!open.empty() && open.back() <= s->start) open.pop_back();
      if (!open.empty() && s->end > open.back()) {
        problems.push_back(s->name + " partially overlaps another span on pid " +
                           std::to_string(lane.first) + " tid " + std::to_string(lane.second));
      }
      open.push_back(s->end);
    }
  }
  return problems;
}

}  // namespace dinf::calibration
