#pragma once

#include <cstddef>
#include <vector>

#include "dinf/net/topology.hpp"
#include "dinf/schemes/plan.hpp"
#include "dinf/sim/engine.hpp"
#include "dinf/tensor/cost_model.hpp"
#include "dinf/tensor/transformer.hpp"

namespace dinf::schemes {

// One prompt per microbatch. Generation re-runs the full forward pass over
// the extended sequence for every new token (no distributed KV cache).
struct SchemeInputs {
  std::vector<std::vector<int>> prompts;
  std::size_t max_new_tokens = 0;
};

struct RunSetup {
  net::NetworkTopology topology;
  std::vector<tensor::DeviceProfile> profiles;  // one per device, or empty for defaults
  sim::EngineOptions options;
};

struct SchemeResult {
  std::vector<tensor::Tensor> logits;  // per prompt, from the prompt-only forward pass
  std::vector<std::vector<int>> generated;
  sim::RunReport report;
  std::vector<TraceEvent> trace;
  std::vector<sim::CommittedEvent> events;
};

// Runs `plan` inside a fresh engine. Compute regions charged: "xWq" (query
// projection, position-wise schemes only), "attention", "ffn", "lm_head".
SchemeResult run_scheme(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                        const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                        const RunSetup& setup);

SchemeResult run_tensor_parallel(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                                 const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                                 const RunSetup& setup);
SchemeResult run_pipeline_parallel(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                                   const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                                   const RunSetup& setup);
SchemeResult run_hybrid(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                        const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                        const RunSetup& setup);
SchemeResult run_voltage(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                         const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                         const RunSetup& setup);
SchemeResult run_kilovolts(const PartitionPlan& plan, const tensor::TransformerConfig& config,
                           const tensor::ModelWeights& weights, const SchemeInputs& inputs,
                           const RunSetup& setup);

}  // namespace dinf::schemes
