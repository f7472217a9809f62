#include "dinf/harness/config.hpp"

#include <fstream>
#include <set>

#include "dinf/calibration/calibration.hpp"
#include "dinf/schemes/plan.hpp"
#include "dinf/sim/errors.hpp"
#include "dinf/tensor/random.hpp"

namespace dinf::harness {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ConfigError("config: " + path + ": " + msg);
}

// A JSON object whose keys must all be consumed.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_.empty() ? "<root>" : path_, "must be an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    used_.insert(key);
    return &*it;
  }

  void size(const std::string& key, std::size_t& out) {
    if (const auto* v = find(key)) out = to_size(*v, at(key));
  }
  void u64(const std::string& key, std::uint64_t& out) {
    if (const auto* v = find(key)) out = to_size(*v, at(key));
  }
  void u32(const std::string& key, std::uint32_t& out) {
    if (const auto* v = find(key)) {
      const auto x = to_size(*v, at(key));
      if (x > UINT32_MAX) fail(at(key), "out of range");
      out = static_cast<std::uint32_t>(x);
    }
  }
  void number(const std::string& key, double& out) {
    if (const auto* v = find(key)) out = to_number(*v, at(key));
  }
  void string(const std::string& key, std::string& out) {
    if (const auto* v = find(key)) {
      if (!v->is_string()) fail(at(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.count(k)) fail(at(k), "unknown key");
    }
  }

  static std::uint64_t to_size(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer()) fail(path, "must be non-negative");
    fail(path, "must be a non-negative integer");
  }
  static double to_number(const json& v, const std::string& path) {
    if (!v.is_number()) fail(path, "must be a number");
    return v.get<double>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

tensor::DeviceProfile parse_profile(const json& j, const std::string& path) {
  Fields f(j, path);
  tensor::DeviceProfile p;
  f.number("throughput_flops", p.throughput_flops);
  f.number("slowdown", p.slowdown);
  if (const auto* r = f.find("regions")) {
    if (!r->is_object()) fail(f.at("regions"), "must be an object");
    for (const auto& [name, v] : r->items()) {
      p.region_slowdowns[name] = Fields::to_number(v, f.at("regions." + name));
    }
  }
  f.finish();
  return p;
}

ordered_json profile_json(const tensor::DeviceProfile& p) {
  ordered_json regions = ordered_json::object();
  for (const auto& [k, v] : p.region_slowdowns) regions[k] = v;
  return {{"throughput_flops", p.throughput_flops}, {"slowdown", p.slowdown}, {"regions", regions}};
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& file) {
  std::filesystem::path p(file);
  return p.is_absolute() || base.empty() ? p : base / p;
}

net::NetworkTopology parse_topology(const json& j, const std::filesystem::path& base) {
  Fields f(j, "topology");
  net::NetworkTopology t;
  std::string mode = "per_pair";
  f.string("mode", mode);
  if (mode == "per_pair") {
    t.mode = net::TopologyMode::PerPairLinks;
  } else if (mode == "shared") {
    t.mode = net::TopologyMode::SharedMedium;
  } else {
    fail("topology.mode", "must be \"per_pair\" or \"shared\"");
  }
  std::string fit_file;
  f.string("fit_file", fit_file);
  if (!fit_file.empty()) {
    if (j.contains("latency_s") || j.contains("bandwidth_bytes_per_s")) {
      fail("topology.fit_file", "cannot be combined with latency_s or bandwidth_bytes_per_s");
    }
    t.default_link = calibration::read_fit_link(resolve(base, fit_file));
  }
  f.number("latency_s", t.default_link.latency_s);
  f.number("bandwidth_bytes_per_s", t.default_link.bandwidth_bytes_per_s);
  if (const auto* o = f.find("overrides")) {
    if (!o->is_array()) fail("topology.overrides", "must be an array");
    for (std::size_t i = 0; i < o->size(); ++i) {
      Fields e((*o)[i], "topology.overrides[" + std::to_string(i) + "]");
      std::uint32_t src = 0, dst = 0;
      net::LinkParams link = t.default_link;
      e.u32("src", src);
      e.u32("dst", dst);
      e.number("latency_s", link.latency_s);
      e.number("bandwidth_bytes_per_s", link.bandwidth_bytes_per_s);
      e.finish();
      t.overrides[{src, dst}] = link;
    }
  }
  f.finish();
  return t;
}

ordered_json topology_json(const net::NetworkTopology& t) {
  ordered_json j;
  j["mode"] = t.mode == net::TopologyMode::SharedMedium ? "shared" : "per_pair";
  j["latency_s"] = t.default_link.latency_s;
  j["bandwidth_bytes_per_s"] = t.default_link.bandwidth_bytes_per_s;
  ordered_json list = ordered_json::array();
  for (const auto& [pair, link] : t.overrides) {
    list.push_back({{"src", pair.first},
                    {"dst", pair.second},
                    {"latency_s", link.latency_s},
                    {"bandwidth_bytes_per_s", link.bandwidth_bytes_per_s}});
  }
  j["overrides"] = list;
  return j;
}

const std::pair<const char*, ScriptOp::Kind> kOpNames[] = {
    {"compute", ScriptOp::Kind::Compute},       {"yield", ScriptOp::Kind::Yield},
    {"send", ScriptOp::Kind::Send},             {"recv", ScriptOp::Kind::Recv},
    {"broadcast", ScriptOp::Kind::Broadcast},   {"all_gather", ScriptOp::Kind::AllGather},
    {"all_reduce", ScriptOp::Kind::AllReduce},
};

const char* op_name(ScriptOp::Kind k) {
  for (const auto& [name, kind] : kOpNames) {
    if (kind == k) return name;
  }
  return "?";
}

ScriptOp parse_op(const json& j, const std::string& path, std::size_t n_devices) {
  Fields f(j, path);
  ScriptOp op;
  std::string name;
  f.string("op", name);
  bool found = false;
  for (const auto& [n, kind] : kOpNames) {
    if (name == n) {
      op.kind = kind;
      found = true;
    }
  }
  if (!found) fail(f.at("op"), "unknown operation '" + name + "'");
  switch (op.kind) {
    case ScriptOp::Kind::Compute:
    case ScriptOp::Kind::Yield:
      f.number("seconds", op.seconds);
      break;
    case ScriptOp::Kind::Send:
      f.u32("to", op.peer);
      f.u64("bytes", op.bytes);
      break;
    case ScriptOp::Kind::Recv:
      f.u32("from", op.peer);
      break;
    case ScriptOp::Kind::Broadcast:
      f.u32("root", op.root);
      [[fallthrough]];
    case ScriptOp::Kind::AllGather:
    case ScriptOp::Kind::AllReduce:
      f.u64("bytes", op.bytes);
      if (const auto* g = f.find("group")) {
        if (!g->is_array()) fail(f.at("group"), "must be an array");
        for (const auto& m : *g) op.group.push_back(static_cast<std::uint32_t>(Fields::to_size(m, f.at("group"))));
      } else {
        for (std::size_t d = 0; d < n_devices; ++d) op.group.push_back(static_cast<std::uint32_t>(d));
      }
      break;
  }
  f.finish();
  return op;
}

ordered_json op_json(const ScriptOp& op) {
  ordered_json j;
  j["op"] = op_name(op.kind);
  switch (op.kind) {
    case ScriptOp::Kind::Compute:
    case ScriptOp::Kind::Yield:
      j["seconds"] = op.seconds;
      break;
    case ScriptOp::Kind::Send:
      j["to"] = op.peer;
      j["bytes"] = op.bytes;
      break;
    case ScriptOp::Kind::Recv:
      j["from"] = op.peer;
      break;
    case ScriptOp::Kind::Broadcast:
      j["root"] = op.root;
      [[fallthrough]];
    case ScriptOp::Kind::AllGather:
    case ScriptOp::Kind::AllReduce:
      j["bytes"] = op.bytes;
      j["group"] = op.group;
      break;
  }
  return j;
}

QueueConfig parse_queue(const json& j) {
  Fields f(j, "queue");
  QueueConfig q;
  f.number("arrival_rate", q.arrival_rate);
  f.number("service_seconds", q.service_seconds);
  std::string batching = "none";
  f.string("batching", batching);
  if (batching == "none") {
    q.batching = QueueConfig::Batching::None;
  } else if (batching == "continuous") {
    q.batching = QueueConfig::Batching::Continuous;
  } else {
    fail("queue.batching", "must be \"none\" or \"continuous\"");
  }
  f.size("max_batch", q.max_batch);
  f.number("gamma", q.gamma);
  f.size("iterations_per_request", q.iterations_per_request);
  f.number("horizon_s", q.horizon_s);
  f.finish();
  return q;
}

ordered_json queue_json(const QueueConfig& q) {
  return {{"arrival_rate", q.arrival_rate},
          {"service_seconds", q.service_seconds},
          {"batching", q.batching == QueueConfig::Batching::Continuous ? "continuous" : "none"},
          {"max_batch", q.max_batch},
          {"gamma", q.gamma},
          {"iterations_per_request", q.iterations_per_request},
          {"horizon_s", q.horizon_s}};
}

}  // namespace

ExperimentConfig parse_config(const json& j, const std::filesystem::path& base_dir) {
  Fields f(j, "");
  ExperimentConfig c;
  f.string("scheme", c.scheme);
  f.size("n_devices", c.n_devices);
  f.size("tp_degree", c.tp_degree);
  f.size("pp_stages", c.pp_stages);
  f.size("microbatches", c.microbatches);
  f.size("prompt_length", c.prompt_length);
  f.size("max_new_tokens", c.max_new_tokens);
  f.u64("seed", c.seed);
  if (const auto* m = f.find("model")) {
    Fields mf(*m, "model");
    mf.size("n_layers", c.model.n_layers);
    mf.size("d_model", c.model.d_model);
    mf.size("n_heads", c.model.n_heads);
    mf.size("d_ff", c.model.d_ff);
    mf.size("vocab_size", c.model.vocab_size);
    mf.size("max_seq", c.model.max_seq);
    mf.finish();
  }
  std::string weights;
  f.string("weights_file", weights);
  if (!weights.empty()) c.weights_file = resolve(base_dir, weights).string();
  if (const auto* t = f.find("topology")) c.topology = parse_topology(*t, base_dir);
  if (const auto* d = f.find("device")) c.device = parse_profile(*d, "device");
  if (const auto* ds = f.find("devices")) {
    if (!ds->is_array()) fail("devices", "must be an array");
    for (std::size_t i = 0; i < ds->size(); ++i) {
      c.devices.push_back(parse_profile((*ds)[i], "devices[" + std::to_string(i) + "]"));
    }
  }
  if (const auto* s = f.find("script")) {
    if (!s->is_array()) fail("script", "must be an array of per-device operation lists");
    for (std::size_t d = 0; d < s->size(); ++d) {
      const auto& ops = (*s)[d];
      const auto path = "script[" + std::to_string(d) + "]";
      if (!ops.is_array()) fail(path, "must be an array");
      std::vector<ScriptOp> program;
      for (std::size_t i = 0; i < ops.size(); ++i) {
        program.push_back(parse_op(ops[i], path + "[" + std::to_string(i) + "]", c.n_devices));
      }
      c.script.push_back(std::move(program));
    }
  }
  if (const auto* q = f.find("queue")) c.queue = parse_queue(*q);
  f.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  auto c = parse_config(j, path.parent_path());
  validate(c);
  return c;
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["scheme"] = c.scheme;
  j["n_devices"] = c.n_devices;
  j["tp_degree"] = c.tp_degree;
  j["pp_stages"] = c.pp_stages;
  j["microbatches"] = c.microbatches;
  j["prompt_length"] = c.prompt_length;
  j["max_new_tokens"] = c.max_new_tokens;
  j["seed"] = c.seed;
  j["model"] = {{"n_layers", c.model.n_layers}, {"d_model", c.model.d_model},
                {"n_heads", c.model.n_heads},   {"d_ff", c.model.d_ff},
                {"vocab_size", c.model.vocab_size}, {"max_seq", c.model.max_seq}};
  if (!c.weights_file.empty()) j["weights_file"] = c.weights_file;
  j["topology"] = topology_json(c.topology);
  j["device"] = profile_json(c.device);
  if (!c.devices.empty()) {
    ordered_json list = ordered_json::array();
    for (const auto& p : c.devices) list.push_back(profile_json(p));
    j["devices"] = list;
  }
  if (!c.script.empty()) {
    ordered_json programs = ordered_json::array();
    for (const auto& ops : c.script) {
      ordered_json list = ordered_json::array();
      for (const auto& op : ops) list.push_back(op_json(op));
      programs.push_back(list);
    }
    j["script"] = programs;
  }
  if (c.queue) j["queue"] = queue_json(*c.queue);
  return j;
}

void validate(const ExperimentConfig& c) {
  if (c.n_devices == 0) fail("n_devices", "must be >= 1");
  if (c.microbatches == 0) fail("microbatches", "must be >= 1");
  if (c.prompt_length == 0) fail("prompt_length", "must be >= 1");
  c.model.validate();
  if (c.prompt_length + c.max_new_tokens > c.model.max_seq) {
    fail("prompt_length", "prompt_length + max_new_tokens exceeds model.max_seq");
  }
  c.topology.validate(c.n_devices);
  c.device.validate();
  if (!c.devices.empty() && c.devices.size() != c.n_devices) {
    fail("devices", "needs one profile per device (" + std::to_string(c.n_devices) + ")");
  }
  for (const auto& p : c.devices) p.validate();

  if (c.scheme == "script") {
    if (c.script.size() != c.n_devices) fail("script", "needs one operation list per device");
    for (std::size_t d = 0; d < c.script.size(); ++d) {
      for (std::size_t i = 0; i < c.script[d].size(); ++i) {
        const auto& op = c.script[d][i];
        const auto path = "script[" + std::to_string(d) + "][" + std::to_string(i) + "]";
        if (op.kind == ScriptOp::Kind::Compute || op.kind == ScriptOp::Kind::Yield) {
          if (!(op.seconds >= 0.0)) fail(path + ".seconds", "must be >= 0");
        } else if (op.kind == ScriptOp::Kind::Send || op.kind == ScriptOp::Kind::Recv) {
          if (op.peer >= c.n_devices) fail(path, "peer out of range");
          if (op.peer == d) fail(path, "a device cannot message itself");
        } else {
          std::set<std::uint32_t> members(op.group.begin(), op.group.end());
          if (op.group.empty() || members.size() != op.group.size()) fail(path + ".group", "must list distinct devices");
          if (*members.rbegin() >= c.n_devices) fail(path + ".group", "device out of range");
          if (!members.count(static_cast<std::uint32_t>(d))) fail(path + ".group", "must include the calling device");
          if (op.kind == ScriptOp::Kind::Broadcast && !members.count(op.root)) {
            fail(path + ".root", "must be a member of the group");
          }
        }
      }
    }
  } else {
    const auto kind = schemes::parse_scheme_kind(c.scheme);
    if (!kind) fail("scheme", "unknown scheme '" + c.scheme + "'");
    if (!c.script.empty()) fail("script", "only valid with scheme \"script\"");
    schemes::make_plan({*kind, c.n_devices, c.tp_degree, c.pp_stages, c.microbatches, c.prompt_length},
                       c.model);
  }

  if (c.queue) {
    const auto& q = *c.queue;
    if (!(q.arrival_rate > 0.0)) fail("queue.arrival_rate", "must be > 0");
    if (!(q.service_seconds >= 0.0)) fail("queue.service_seconds", "must be >= 0");
    if (q.max_batch == 0) fail("queue.max_batch", "must be >= 1");
    if (!(q.gamma >= 0.0 && q.gamma < 1.0)) fail("queue.gamma", "must be in [0, 1)");
    if (q.iterations_per_request == 0) fail("queue.iterations_per_request", "must be >= 1");
    if (!(q.horizon_s > 0.0)) fail("queue.horizon_s", "must be > 0");
  }
}

std::vector<tensor::DeviceProfile> device_profiles(const ExperimentConfig& c) {
  if (!c.devices.empty()) return c.devices;
  return std::vector<tensor::DeviceProfile>(c.n_devices, c.device);
}

std::vector<std::vector<int>> make_prompts(const ExperimentConfig& c) {
  auto rng = substream(c.seed, "prompts");
  std::vector<std::vector<int>> out(c.microbatches, std::vector<int>(c.prompt_length));
  for (auto& p : out) {
    for (auto& t : p) t = static_cast<int>(rng() % c.model.vocab_size);
  }
  return out;
}

}  // namespace dinf::harness
