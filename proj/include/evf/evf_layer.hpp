// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/allocator.hpp"
#include "evf/ffn.hpp"
#include "evf/router.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace evf {

// Router plus a frozen language FFN and a trainable vision FFN.
struct EvfLayerParams {
    RouterParams router;
    FfnParams language_ffn;
    FfnParams vision_ffn;
    CapacityConfig capacity;
    Strategy strategy = Strategy::img_gbpr;

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
};

// Both FFNs become bit-exact copies of `dense`; the router starts at zero so
// every token is first routed at (0.5, 0.5).
EvfLayerParams init_stage3_from_dense(const FfnParams& dense, const std::string& prefix,
                                      CapacityConfig capacity = {},
                                      Strategy strategy = Strategy::img_gbpr);

inline constexpr std::size_t kProbabilityBins = 10;

struct LayerTelemetry {
    std::size_t layer = 0;
    Strategy strategy = Strategy::img_gbpr;
    AllocationStats stats;
    // Histogram of the vision-column routing probability over [0, 1].
    std::array<std::size_t, kProbabilityBins> vision_probability_histogram{};
};

std::array<std::size_t, kProbabilityBins> vision_probability_histogram(const RoutingDecision& d);

struct EvfForward {
    Var output;
    Var probabilities;
    RoutingDecision decision;
    AllocationPlan plan;
    LayerTelemetry telemetry;
};

// output[t] = P(x_t)[e] * FFN_e(x_t) for tokens accepted by FFN e, and a zero
// row for dropped tokens. `allocation_seed` replaces capacity.seed for this call.
EvfForward forward_multimodal(Graph& g, const EvfLayerParams& layer, Var tokens,
                              const ModalityTags& tags, std::uint64_t allocation_seed,
                              std::size_t layer_index = 0);

struct EvfOutput {
    Tensor output;
    RoutingDecision decision;
    AllocationPlan plan;
    LayerTelemetry telemetry;
};

EvfOutput forward_multimodal(const EvfLayerParams& layer, const Tensor& tokens,
                             const ModalityTags& tags, std::uint64_t allocation_seed,
                             std::size_t layer_index = 0);

// The language FFN alone: no router, no gate, no capacity.
Var forward_language_only(Graph& g, const EvfLayerParams& layer, Var tokens);
Tensor forward_language_only(const EvfLayerParams& layer, const Tensor& tokens);

}  // namespace evf
