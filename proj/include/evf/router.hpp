// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/graph.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace evf {

// Column order of every two-expert tensor: 0 = language FFN, 1 = vision FFN.
enum class Ffn : std::uint8_t { language = 0, vision = 1 };
inline constexpr std::size_t kNumFfns = 2;

constexpr std::size_t index_of(Ffn f) noexcept { return static_cast<std::size_t>(f); }
constexpr Ffn other(Ffn f) noexcept { return f == Ffn::language ? Ffn::vision : Ffn::language; }
std::string_view to_string(Ffn f) noexcept;

// Argmax of a two-column row; exact ties go to the language FFN.
constexpr Ffn preferred_of(double language, double vision) noexcept {
    return vision > language ? Ffn::vision : Ffn::language;
}

struct RouterParams {
    Parameter weight;  // d x 2

    static RouterParams zeros(const std::string& prefix, std::size_t width);
    std::size_t input_width() const noexcept { return weight.value.rows(); }
};

struct RoutingDecision {
    Tensor logits;         // n x 2
    Tensor probabilities;  // n x 2, rows sum to 1
    std::vector<Ffn> preferred;

    std::size_t size() const noexcept { return preferred.size(); }
};

// Graph-side routing result: the probability node feeds gating and the
// balancing loss, the decision feeds allocation.
struct RoutedTokens {
    Var logits;
    Var probabilities;
    RoutingDecision decision;
};

RoutingDecision route(const RouterParams& router, const Tensor& tokens);
RoutedTokens route(Graph& g, const RouterParams& router, Var tokens);

// Counters used to prove that language-only inference never routes or allocates.
namespace instrumentation {
std::uint64_t routing_decisions() noexcept;
std::uint64_t allocation_plans() noexcept;
void count_routing_decision() noexcept;
void count_allocation_plan() noexcept;
void reset() noexcept;
}  // namespace instrumentation

}  // namespace evf
