// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/router.hpp"

#include "evf/errors.hpp"

namespace evf {

std::string_view to_string(Ffn f) noexcept {
    return f == Ffn::language ? "language" : "vision";
}

RouterParams RouterParams::zeros(const std::string& prefix, std::size_t width) {
    return RouterParams{Parameter(prefix + ".router.weight", Tensor(width, kNumFfns))};
}

namespace {

void check_width(const RouterParams& router, const Tensor& tokens) {
    if (router.weight.value.cols() != kNumFfns) {
        throw DimensionError("router weight must have exactly two columns, got " +
                             router.weight.value.shape_string());
    }
    if (tokens.cols() != router.input_width()) {
        throw DimensionError("route: tokens " + tokens.shape_string() +
                             " do not match router input width " +
                             std::to_string(router.input_width()));
    }
}

RoutingDecision make_decision(Tensor logits, Tensor probabilities) {
    RoutingDecision d;
    d.preferred.reserve(probabilities.rows());
    for (std::size_t i = 0; i < probabilities.rows(); ++i) {
        d.preferred.push_back(preferred_of(logits(i, 0), logits(i, 1)));
    }
    d.logits = std::move(logits);
    d.probabilities = std::move(probabilities);
    instrumentation::count_routing_decision();
    return d;
}

}  // namespace

RoutingDecision route(const RouterParams& router, const Tensor& tokens) {
    check_width(router, tokens);
    Tensor logits = kernels::matmul(tokens, router.weight.value);
    Tensor probs = kernels::softmax_rows(logits);
    return make_decision(std::move(logits), std::move(probs));
}

RoutedTokens route(Graph& g, const RouterParams& router, Var tokens) {
    check_width(router, tokens.value());
    Var logits = ops::matmul(tokens, g.param(router.weight));
    Var probs = ops::softmax_rows(logits);
    return RoutedTokens{logits, probs, make_decision(logits.value(), probs.value())};
}

namespace instrumentation {

namespace {
std::atomic<std::uint64_t> g_routing{0};
std::atomic<std::uint64_t> g_plans{0};
}  // namespace

std::uint64_t routing_decisions() noexcept { return g_routing.load(); }
std::uint64_t allocation_plans() noexcept { return g_plans.load(); }
void count_routing_decision() noexcept { g_routing.fetch_add(1, std::memory_order_relaxed); }
void count_allocation_plan() noexcept { g_plans.fetch_add(1, std::memory_order_relaxed); }
void reset() noexcept {
    g_routing.store(0);
    g_plans.store(0);
}

}  // namespace instrumentation

}  // namespace evf
