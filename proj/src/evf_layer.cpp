// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/evf_layer.hpp"

#include "evf/errors.hpp"

#include <algorithm>

namespace evf {

std::vector<Parameter*> EvfLayerParams::parameters() {
    std::vector<Parameter*> out{&router.weight};
    for (Parameter* p : language_ffn.parameters()) out.push_back(p);
    for (Parameter* p : vision_ffn.parameters()) out.push_back(p);
    return out;
}

std::vector<const Parameter*> EvfLayerParams::parameters() const {
    std::vector<const Parameter*> out{&router.weight};
    for (const Parameter* p : language_ffn.parameters()) out.push_back(p);
    for (const Parameter* p : vision_ffn.parameters()) out.push_back(p);
    return out;
}

EvfLayerParams init_stage3_from_dense(const FfnParams& dense, const std::string& prefix,
                                      CapacityConfig capacity, Strategy strategy) {
    capacity.validate();
    EvfLayerParams layer;
    layer.router = RouterParams::zeros(prefix, dense.width());
    layer.router.weight.trainable = true;
    layer.language_ffn = dense;
    layer.language_ffn.rename(prefix + ".language_ffn");
    layer.language_ffn.set_trainable(false);
    layer.vision_ffn = dense;
    layer.vision_ffn.rename(prefix + ".vision_ffn");
    layer.vision_ffn.set_trainable(true);
    for (Parameter* p : layer.parameters()) {
        p->zero_grad();
    }
    layer.capacity = capacity;
    layer.strategy = strategy;
    return layer;
}

std::array<std::size_t, kProbabilityBins> vision_probability_histogram(const RoutingDecision& d) {
    std::array<std::size_t, kProbabilityBins> bins{};
    for (std::size_t t = 0; t < d.size(); ++t) {
        const double p = d.probabilities(t, index_of(Ffn::vision));
        const auto bin = std::min<std::size_t>(kProbabilityBins - 1,
                                               static_cast<std::size_t>(p * kProbabilityBins));
        ++bins[bin];
    }
    return bins;
}

EvfForward forward_multimodal(Graph& g, const EvfLayerParams& layer, Var tokens,
                              const ModalityTags& tags, std::uint64_t allocation_seed,
                              std::size_t layer_index) {
    const Tensor& x = tokens.value();
    if (tags.size() != x.rows()) {
        throw ContractError("forward_multimodal: " + std::to_string(tags.size()) + " tags for " +
                            std::to_string(x.rows()) + " tokens");
    }
    if (x.cols() != layer.language_ffn.width()) {
        throw DimensionError("forward_multimodal: tokens " + x.shape_string() +
                             " do not match layer width " + std::to_string(layer.language_ffn.width()));
    }

    RoutedTokens routed = route(g, layer.router, tokens);
    CapacityConfig cfg = layer.capacity;
    cfg.seed = allocation_seed;
    AllocationPlan plan = dispatch(routed.decision, tags, cfg, layer.strategy);

    std::vector<Var> pieces;
    for (std::size_t e = 0; e < kNumFfns; ++e) {
        const auto& rows = plan.accepted[e];
        if (rows.empty()) {
            continue;
        }
        const FfnParams& ffn = e == index_of(Ffn::language) ? layer.language_ffn : layer.vision_ffn;
        Var expert_out = ffn_forward(g, ffn, ops::gather_rows(tokens, rows));
        Var gate = ops::take_column_entries(routed.probabilities, rows, e);
        pieces.push_back(ops::scatter_rows(ops::scale_rows(expert_out, gate), rows, x.rows()));
    }
    Var output;
    if (pieces.empty()) {
        output = g.constant(Tensor(x.rows(), x.cols()));
    } else {
        output = pieces.front();
        for (std::size_t i = 1; i < pieces.size(); ++i) {
            output = ops::add(output, pieces[i]);
        }
    }

    LayerTelemetry telemetry;
    telemetry.layer = layer_index;
    telemetry.strategy = layer.strategy;
    telemetry.stats = allocation_stats(plan, tags);
    telemetry.vision_probability_histogram = vision_probability_histogram(routed.decision);

    return EvfForward{output, routed.probabilities, std::move(routed.decision), std::move(plan),
                      telemetry};
}

EvfOutput forward_multimodal(const EvfLayerParams& layer, const Tensor& tokens,
                             const ModalityTags& tags, std::uint64_t allocation_seed,
                             std::size_t layer_index) {
    Graph g(false);
    EvfForward f = forward_multimodal(g, layer, g.constant(tokens), tags, allocation_seed, layer_index);
    return EvfOutput{f.output.value(), std::move(f.decision), std::move(f.plan), f.telemetry};
}

Var forward_language_only(Graph& g, const EvfLayerParams& layer, Var tokens) {
    if (tokens.value().cols() != layer.language_ffn.width()) {
        throw ContractError("forward_language_only: tokens " + tokens.value().shape_string() +
                            " do not match layer width " + std::to_string(layer.language_ffn.width()));
    }
    return ffn_forward(g, layer.language_ffn, tokens);
}

Tensor forward_language_only(const EvfLayerParams& layer, const Tensor& tokens) {
    Graph g(false);
    return forward_language_only(g, layer, g.constant(tokens)).value();
}

}  // namespace evf
