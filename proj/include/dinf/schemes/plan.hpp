#pragma once

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "dinf/tensor/transformer.hpp"

namespace dinf::schemes {

enum class SchemeKind { TP, PP, Hybrid, Voltage, Kilovolts };

std::string_view to_string(SchemeKind kind);
std::optional<SchemeKind> parse_scheme_kind(std::string_view name);

// Half-open index range.
struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(Range, Range) = default;
};

// Splits [0, total) into `parts` contiguous ranges of total/parts items; the
// last range absorbs the remainder.
std::vector<Range> split_tail(std::size_t total, std::size_t parts);
// Splits [0, total) into `parts` contiguous ranges whose sizes differ by at
// most one, larger ranges first.
std::vector<Range> split_even(std::size_t total, std::size_t parts);

// Device d of a Hybrid plan sits in stage d / tp_degree at TP rank d % tp_degree.
// TP and PP plans are Hybrid plans with one stage or one rank per stage.
struct PartitionPlan {
  SchemeKind kind = SchemeKind::TP;
  std::size_t n_devices = 1;
  std::size_t tp_degree = 1;
  std::size_t pp_stages = 1;
  std::size_t microbatches = 1;

  // Per device. Empty when the scheme does not partition that resource.
  std::vector<Range> heads;
  std::vector<Range> ff_columns;
  std::vector<Range> layers;
  std::vector<Range> positions;  // for the prompt length the plan was built for

  bool position_wise() const { return kind == SchemeKind::Voltage || kind == SchemeKind::Kilovolts; }
};

struct PlanRequest {
  SchemeKind kind = SchemeKind::TP;
  std::size_t n_devices = 1;
  std::size_t tp_degree = 0;  // Hybrid only; 0 derives it from pp_stages
  std::size_t pp_stages = 0;  // Hybrid only; 0 derives it from tp_degree
  std::size_t microbatches = 1;
  std::size_t seq_len = 1;
};

// Builds and validates a plan. Throws ConfigError on indivisible heads or
// feed-forward width, empty stages, bad factorizations or too few positions.
PartitionPlan make_plan(const PlanRequest& request, const tensor::TransformerConfig& config);

// Checks that the assignments partition each resource exactly.
void validate_plan(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                   std::size_t seq_len);

}  // namespace dinf::schemes
