#include "dinf/harness/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <sstream>

#include "dinf/schemes/schemes.hpp"
#include "dinf/sim/errors.hpp"
#include "dinf/tensor/weights_io.hpp"

namespace dinf::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

net::Group to_group(const std::vector<std::uint32_t>& members) {
  net::Group g;
  for (auto m : members) g.push_back(process_id(m));
  return g;
}

Task<void> script_program(sim::Device& dev, std::vector<ScriptOp> ops) {
  for (const auto& op : ops) {
    switch (op.kind) {
      case ScriptOp::Kind::Compute:
        co_await dev.busy(SimTime::from_seconds(op.seconds), "compute");
        break;
      case ScriptOp::Kind::Yield:
        co_await dev.yield_seconds(op.seconds);
        break;
      case ScriptOp::Kind::Send: {
        net::Payload p = net::Payload::of_bytes(op.bytes);
        net::Payload done = co_await dev.send(process_id(op.peer), std::move(p));
        (void)done;
        break;
      }
      case ScriptOp::Kind::Recv: {
        net::Payload got = co_await dev.recv(process_id(op.peer));
        (void)got;
        break;
      }
      case ScriptOp::Kind::Broadcast: {
        net::Group g = to_group(op.group);
        net::Payload p = net::Payload::of_bytes(dev.id() == process_id(op.root) ? op.bytes : 0);
        net::Payload got = co_await dev.broadcast(g, process_id(op.root), std::move(p));
        (void)got;
        break;
      }
      case ScriptOp::Kind::AllGather: {
        net::Group g = to_group(op.group);
        net::Payload p = net::Payload::of_bytes(op.bytes);
        net::Payload got = co_await dev.all_gather(g, std::move(p));
        (void)got;
        break;
      }
      case ScriptOp::Kind::AllReduce: {
        net::Group g = to_group(op.group);
        net::Payload p = net::Payload::of_bytes(op.bytes);
        net::Payload got = co_await dev.all_reduce(g, std::move(p));
        (void)got;
        break;
      }
    }
  }
}

ExperimentResult run_script(const ExperimentConfig& c, const RunOptions& options) {
  sim::Engine engine(c.topology, {options.record_events, options.record_trace});
  const auto profiles = device_profiles(c);
  for (std::size_t d = 0; d < c.n_devices; ++d) {
    const auto& ops = c.script[d];
    engine.register_device([ops](sim::Device& dev) { return script_program(dev, ops); }, profiles[d]);
  }
  ExperimentResult r;
  r.scheme = c.scheme;
  r.report = engine.run_until_complete();
  r.trace = engine.trace();
  r.events = engine.committed_events();
  return r;
}

tensor::ModelWeights load_model(const ExperimentConfig& c) {
  if (c.weights_file.empty()) return tensor::init_weights(c.model, c.seed);
  tensor::TransformerConfig stored;
  auto w = tensor::load_weights(c.weights_file, &stored);
  if (!(stored == c.model)) throw ConfigError("config: weights_file: stored model shape differs from model");
  return w;
}

ExperimentResult run_model(const ExperimentConfig& c, const RunOptions& options) {
  const auto kind = *schemes::parse_scheme_kind(c.scheme);
  const auto plan = schemes::make_plan(
      {kind, c.n_devices, c.tp_degree, c.pp_stages, c.microbatches, c.prompt_length}, c.model);
  const auto weights = load_model(c);
  const schemes::SchemeInputs inputs{make_prompts(c), c.max_new_tokens};
  const schemes::RunSetup setup{c.topology, device_profiles(c), {options.record_events, options.record_trace}};

  auto s = schemes::run_scheme(plan, c.model, weights, inputs, setup);
  ExperimentResult r;
  r.scheme = c.scheme;
  r.report = std::move(s.report);
  r.trace = std::move(s.trace);
  r.events = std::move(s.events);
  r.generated = std::move(s.generated);
  if (options.check_oracle) {
    double worst = 0.0;
    bool same = true;
    for (std::size_t i = 0; i < inputs.prompts.size(); ++i) {
      const auto ref = tensor::transformer_forward(inputs.prompts[i], weights, c.model);
      worst = std::max(worst, tensor::max_relative_error(s.logits[i], ref));
      if (c.max_new_tokens > 0) {
        auto tokens = tensor::greedy_generate(inputs.prompts[i], c.max_new_tokens, weights, c.model, true);
        same = same && i < r.generated.size() && tokens == r.generated[i];
      }
    }
    r.oracle_max_relative_error = worst;
    if (c.max_new_tokens > 0) r.generation_matches_oracle = same;
  }
  return r;
}

std::string seconds_text(double s) {
  std::ostringstream os;
  os << std::setprecision(9) << s;
  return os.str();
}

std::optional<double> as_number(const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

// Numbers order numerically and before text.
bool value_less(const std::string& a, const std::string& b) {
  const auto x = as_number(a), y = as_number(b);
  if (x && y) return *x < *y;
  if (x || y) return x.has_value();
  return a < b;
}

json axis_value(const std::string& s) {
  if (auto v = as_number(s)) {
    if (s.find_first_of(".eE") == std::string::npos && *v >= 0) return json(static_cast<std::uint64_t>(*v));
    return json(*v);
  }
  if (s == "true" || s == "false") return json(s == "true");
  return json(s);
}

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& config, const RunOptions& options) {
  validate(config);
  return config.scheme == "script" ? run_script(config, options) : run_model(config, options);
}

ordered_json report_json(const ExperimentResult& r) {
  ordered_json j;
  j["status"] = "ok";
  j["scheme"] = r.scheme;
  j["end_to_end_ns"] = r.report.end_time.ns();
  j["end_to_end_seconds"] = r.report.end_time.seconds();
  ordered_json devices = ordered_json::array();
  for (const auto& d : r.report.devices) {
    devices.push_back({{"device", index_of(d.id)},
                       {"compute_ns", d.compute.ns()},
                       {"wait_ns", d.wait.ns()},
                       {"idle_ns", d.idle.ns()}});
  }
  j["devices"] = devices;
  ordered_json links = ordered_json::array();
  for (const auto& [pair, bytes] : r.report.link_bytes) {
    links.push_back({{"src", index_of(pair.first)}, {"dst", index_of(pair.second)}, {"bytes", bytes}});
  }
  j["links"] = links;
  j["total_network_bytes"] = r.report.total_network_bytes;
  j["network_operations"] = r.report.network_operations;
  if (!r.generated.empty()) j["generated"] = r.generated;
  if (r.oracle_max_relative_error) j["oracle_max_relative_error"] = *r.oracle_max_relative_error;
  if (r.generation_matches_oracle) j["generation_matches_oracle"] = *r.generation_matches_oracle;
  return j;
}

ordered_json deadlock_report_json(const std::string& scheme, const DeadlockError& e) {
  std::vector<std::size_t> blocked;
  for (auto p : e.blocked()) blocked.push_back(index_of(p));
  ordered_json j;
  j["status"] = "deadlock";
  j["scheme"] = scheme;
  j["blocked"] = blocked;
  j["at_ns"] = e.at().ns();
  return j;
}

std::string format_report(const ExperimentResult& r) {
  std::ostringstream os;
  os << "scheme " << r.scheme << "  end-to-end " << seconds_text(r.report.end_time.seconds()) << " s\n";
  os << std::left << std::setw(8) << "device" << std::right << std::setw(16) << "compute_s" << std::setw(16)
     << "wait_s" << std::setw(16) << "idle_s" << '\n';
  for (const auto& d : r.report.devices) {
    os << std::left << std::setw(8) << index_of(d.id) << std::right << std::setw(16)
       << seconds_text(d.compute.seconds()) << std::setw(16) << seconds_text(d.wait.seconds()) << std::setw(16)
       << seconds_text(d.idle.seconds()) << '\n';
  }
  os << "network bytes " << r.report.total_network_bytes << " in " << r.report.network_operations
     << " operations\n";
  for (const auto& [pair, bytes] : r.report.link_bytes) {
    os << "  " << pair.first << " -> " << pair.second << "  " << bytes << '\n';
  }
  if (r.oracle_max_relative_error) {
    os << "oracle max relative error " << std::setprecision(3) << *r.oracle_max_relative_error << '\n';
  }
  if (r.generation_matches_oracle) {
    os << "generation " << (*r.generation_matches_oracle ? "matches" : "DIFFERS FROM") << " reference\n";
  }
  return os.str();
}

SweepAxis parse_axis(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("sweep: axis must look like key=v1,v2: " + text);
  SweepAxis axis{text.substr(0, eq), {}};
  std::stringstream ss(text.substr(eq + 1));
  for (std::string v; std::getline(ss, v, ',');) {
    if (v.empty()) throw ConfigError("sweep: empty value on axis " + axis.key);
    axis.values.push_back(v);
  }
  if (axis.values.empty()) throw ConfigError("sweep: axis " + axis.key + " has no values");
  return axis;
}

ExperimentConfig apply_axis(const ExperimentConfig& base, const std::string& key, const std::string& value) {
  auto j = json::parse(to_json(base).dump());
  if (key == "bandwidth_mbps" || key == "latency_ms") {
    const auto v = as_number(value);
    if (!v) throw ConfigError("sweep: " + key + " value '" + value + "' is not a number");
    if (key == "bandwidth_mbps") {
      j["topology"]["bandwidth_bytes_per_s"] = *v * 1e6 / 8.0;
    } else {
      j["topology"]["latency_s"] = *v / 1000.0;
    }
  } else {
    json* node = &j;
    std::stringstream ss(key);
    std::vector<std::string> parts;
    for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
      if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) {
        throw ConfigError("sweep: unknown axis " + key);
      }
      node = &(*node)[parts[i]];
    }
    (*node)[parts.back()] = axis_value(value);
  }
  auto c = parse_config(j);
  validate(c);
  return c;
}

SweepResult run_sweep(const ExperimentConfig& base, const std::vector<SweepAxis>& axes) {
  SweepResult out;
  std::vector<SweepAxis> grid;
  for (const auto& a : axes) {
    if (a.key == "scheme") {
      out.schemes = a.values;
    } else {
      auto sorted = a;
      std::stable_sort(sorted.values.begin(), sorted.values.end(), value_less);
      out.axis_keys.push_back(a.key);
      grid.push_back(std::move(sorted));
    }
  }
  if (out.schemes.empty()) out.schemes = {base.scheme};

  std::vector<std::size_t> index(grid.size(), 0);
  while (true) {
    SweepCell cell;
    cell.schemes = out.schemes;
    for (std::size_t a = 0; a < grid.size(); ++a) cell.values.push_back(grid[a].values[index[a]]);
    for (const auto& scheme : out.schemes) {
      try {
        auto c = apply_axis(base, "scheme", scheme);
        for (std::size_t a = 0; a < grid.size(); ++a) c = apply_axis(c, grid[a].key, cell.values[a]);
        const auto r = run_experiment(c, {false, false, false});
        cell.seconds.emplace_back(r.report.end_time.seconds());
        cell.errors.emplace_back();
      } catch (const std::exception& e) {
        cell.seconds.emplace_back();
        cell.errors.emplace_back(e.what());
      }
    }
    if (cell.seconds.size() == 2 && cell.seconds[0] && cell.seconds[1] && *cell.seconds[1] > 0) {
      cell.speedup = *cell.seconds[0] / *cell.seconds[1] - 1.0;
    }
    out.cells.push_back(std::move(cell));

    std::size_t a = grid.size();
    while (a > 0) {
      --a;
      if (++index[a] < grid[a].values.size()) break;
      index[a] = 0;
      if (a == 0) return out;
    }
    if (grid.empty()) return out;
  }
}

std::string sweep_csv(const SweepResult& r) {
  std::ostringstream os;
  for (const auto& k : r.axis_keys) os << k << ',';
  for (const auto& s : r.schemes) os << s << "_seconds,";
  if (r.schemes.size() == 2) os << "speedup,";
  os << "status\n";
  for (const auto& cell : r.cells) {
    for (const auto& v : cell.values) os << v << ',';
    std::string status = "ok";
    for (std::size_t i = 0; i < cell.seconds.size(); ++i) {
      if (cell.seconds[i]) {
        os << seconds_text(*cell.seconds[i]);
      } else {
        status = "failed";
      }
      os << ',';
    }
    if (r.schemes.size() == 2) {
      if (cell.speedup) os << seconds_text(*cell.speedup);
      os << ',';
    }
    os << status << '\n';
  }
  return os.str();
}

}  // namespace dinf::harness
