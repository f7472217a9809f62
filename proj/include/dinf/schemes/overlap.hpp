#pragma once

#include <cstddef>

#include "dinf/net/topology.hpp"
#include "dinf/sim/time.hpp"
#include "dinf/tensor/cost_model.hpp"
#include "dinf/tensor/transformer.hpp"

namespace dinf::schemes {

// Two readings of what issuing the layer-input all-gather together with the
// local query projection buys per layer:
//   exposed_transfer = max(0, T_transfer - T_xWq), transfer time left
//                      uncovered once the projection runs underneath it;
//   schedule_gain    = min(T_transfer, T_xWq), the saving against running
//                      the two back to back, which is what the simulator measures.
struct OverlapEstimate {
  double t_transfer = 0.0;
  double t_xwq = 0.0;
  double exposed_transfer = 0.0;
  double schedule_gain = 0.0;
};

OverlapEstimate estimate_overlap_gain(double t_transfer, double t_xwq);

// Modeled durations for one layer of a position-wise run with `n` equal
// slices of a length-`seq_len` sequence (seq_len divisible by n), exactly as
// the engine quantizes them.
struct LayerTimings {
  SimTime transfer;  // ring all-gather of one slice per device
  SimTime xwq;       // slice query projection
};

LayerTimings modeled_layer_timings(const tensor::TransformerConfig& config, std::size_t seq_len,
                                   std::size_t n, const net::NetworkTopology& topology,
                                   const tensor::DeviceProfile& profile);

}  // namespace dinf::schemes
