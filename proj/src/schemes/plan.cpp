#include "dinf/schemes/plan.hpp"

#include <sstream>

#include "dinf/sim/errors.hpp"

namespace dinf::schemes {

std::string_view to_string(SchemeKind kind) {
  switch (kind) {
    case SchemeKind::TP: return "tp";
    case SchemeKind::PP: return "pp";
    case SchemeKind::Hybrid: return "hybrid";
    case SchemeKind::Voltage: return "voltage";
    case SchemeKind::Kilovolts: return "kilovolts";
  }
  return "unknown";
}

std::optional<SchemeKind> parse_scheme_kind(std::string_view name) {
  for (auto k : {SchemeKind::TP, SchemeKind::PP, SchemeKind::Hybrid, SchemeKind::Voltage,
                 SchemeKind::Kilovolts}) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

std::vector<Range> split_tail(std::size_t total, std::size_t parts) {
  if (parts == 0) throw ConfigError("split: zero parts");
  std::vector<Range> out;
  const auto base = total / parts;
  for (std::size_t i = 0; i < parts; ++i) out.push_back({i * base, (i + 1) * base});
  out.back().end = total;
  return out;
}

std::vector<Range> split_even(std::size_t total, std::size_t parts) {
  if (parts == 0) throw ConfigError("split: zero parts");
  std::vector<Range> out;
  const auto base = total / parts;
  const auto extra = total % parts;
  std::size_t at = 0;
  for (std::size_t i = 0; i < parts; ++i) {
    const auto n = base + (i < extra ? 1 : 0);
    out.push_back({at, at + n});
    at += n;
  }
  return out;
}

namespace {

void check_partition(const std::vector<Range>& ranges, std::size_t total, const char* what,
                     bool allow_empty) {
  std::size_t at = 0;
  for (const auto& r : ranges) {
    if (r.begin != at || r.end < r.begin) {
      throw ConfigError(std::string("plan: ") + what + " ranges leave a gap or overlap");
    }
    if (!allow_empty && r.size() == 0) {
      throw ConfigError(std::string("plan: a device was assigned zero ") + what);
    }
    at = r.end;
  }
  if (at != total) throw ConfigError(std::string("plan: ") + what + " ranges do not cover all items");
}

// Hybrid ranges repeat per stage (heads, ff) or per rank (layers).
std::vector<Range> stage_slice(const std::vector<Range>& all, std::size_t stage, std::size_t tp) {
  return {all.begin() + static_cast<std::ptrdiff_t>(stage * tp),
          all.begin() + static_cast<std::ptrdiff_t>((stage + 1) * tp)};
}

}  // namespace

PartitionPlan make_plan(const PlanRequest& req, const tensor::TransformerConfig& config) {
  config.validate();
  if (req.n_devices == 0) throw ConfigError("plan: devices must be >= 1");
  if (req.microbatches == 0) throw ConfigError("plan: microbatches must be >= 1");
  PartitionPlan plan;
  plan.kind = req.kind;
  plan.n_devices = req.n_devices;
  plan.microbatches = req.microbatches;

  switch (req.kind) {
    case SchemeKind::TP:
      plan.tp_degree = req.n_devices;
      plan.pp_stages = 1;
      break;
    case SchemeKind::PP:
      plan.tp_degree = 1;
      plan.pp_stages = req.n_devices;
      break;
    case SchemeKind::Hybrid: {
      auto tp = req.tp_degree;
      auto pp = req.pp_stages;
      if (tp == 0 && pp == 0) throw ConfigError("plan: hybrid needs tp_degree or pp_stages");
      if (tp == 0) tp = pp == 0 ? 0 : req.n_devices / pp;
      if (pp == 0) pp = req.n_devices / tp;
      if (tp == 0 || pp == 0 || tp * pp != req.n_devices) {
        std::ostringstream os;
        os << "plan: tp_degree (" << tp << ") x pp_stages (" << pp << ") must equal devices ("
           << req.n_devices << ")";
        throw ConfigError(os.str());
      }
      plan.tp_degree = tp;
      plan.pp_stages = pp;
      break;
    }
    case SchemeKind::Voltage:
    case SchemeKind::Kilovolts:
      plan.positions = split_tail(req.seq_len, req.n_devices);
      validate_plan(plan, config, req.seq_len);
      return plan;
  }

  const auto tp = plan.tp_degree;
  if (config.n_heads % tp != 0) {
    std::ostringstream os;
    os << "plan: n_heads (" << config.n_heads << ") is not divisible by tp degree (" << tp << ")";
    throw ConfigError(os.str());
  }
  if (config.d_ff % tp != 0) {
    std::ostringstream os;
    os << "plan: d_ff (" << config.d_ff << ") is not divisible by tp degree (" << tp << ")";
    throw ConfigError(os.str());
  }
  if (config.n_layers < plan.pp_stages) {
    std::ostringstream os;
    os << "plan: " << plan.pp_stages << " stages for " << config.n_layers
       << " layers leaves a stage with zero layers";
    throw ConfigError(os.str());
  }
  const auto head_split = split_even(config.n_heads, tp);
  const auto ff_split = split_even(config.d_ff, tp);
  const auto layer_split = split_even(config.n_layers, plan.pp_stages);
  for (std::size_t d = 0; d < plan.n_devices; ++d) {
    plan.heads.push_back(head_split[d % tp]);
    plan.ff_columns.push_back(ff_split[d % tp]);
    plan.layers.push_back(layer_split[d / tp]);
  }
  validate_plan(plan, config, req.seq_len);
  return plan;
}

void validate_plan(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                   std::size_t seq_len) {
  if (plan.n_devices == 0) throw ConfigError("plan: devices must be >= 1");
  if (plan.microbatches == 0) throw ConfigError("plan: microbatches must be >= 1");
  if (plan.position_wise()) {
    if (seq_len < plan.n_devices) {
      std::ostringstream os;
      os << "plan: sequence length " << seq_len << " is shorter than the device count "
         << plan.n_devices;
      throw ConfigError(os.str());
    }
    if (plan.positions.size() != plan.n_devices) throw ConfigError("plan: one position range per device");
    check_partition(plan.positions, seq_len, "positions", false);
    return;
  }
  if (plan.tp_degree * plan.pp_stages != plan.n_devices) {
    throw ConfigError("plan: tp_degree x pp_stages must equal devices");
  }
  if (plan.heads.size() != plan.n_devices || plan.ff_columns.size() != plan.n_devices ||
      plan.layers.size() != plan.n_devices) {
    throw ConfigError("plan: one assignment per device");
  }
  const auto tp = plan.tp_degree;
  for (std::size_t s = 0; s < plan.pp_stages; ++s) {
    check_partition(stage_slice(plan.heads, s, tp), config.n_heads, "heads", false);
    check_partition(stage_slice(plan.ff_columns, s, tp), config.d_ff, "feed-forward columns", false);
    for (std::size_t r = 1; r < tp; ++r) {
      if (plan.layers[s * tp + r] != plan.layers[s * tp]) {
        throw ConfigError("plan: ranks of one stage must share its layer range");
      }
    }
  }
  std::vector<Range> stages;
  for (std::size_t s = 0; s < plan.pp_stages; ++s) stages.push_back(plan.layers[s * tp]);
  check_partition(stages, config.n_layers, "layers", false);
}

}  // namespace dinf::schemes
