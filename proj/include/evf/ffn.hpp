// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/graph.hpp"
#include "evf/rng.hpp"

#include <array>
#include <string>

namespace evf {

// Two-layer feed-forward block: down(gelu(up(x))).
struct FfnParams {
    Parameter up_weight;    // d x h
    Parameter up_bias;      // 1 x h
    Parameter down_weight;  // h x d
    Parameter down_bias;    // 1 x d

    static FfnParams zeros(const std::string& prefix, std::size_t width, std::size_t hidden);
    // Weights ~ N(0, 1/fan_in), zero biases.
    static FfnParams random(const std::string& prefix, std::size_t width, std::size_t hidden,
                            Rng& rng);

    std::size_t width() const noexcept { return up_weight.value.rows(); }
    std::size_t hidden() const noexcept { return up_weight.value.cols(); }

    bool trainable() const noexcept { return up_weight.trainable; }
    void set_trainable(bool on);
    // Re-prefixes the four parameter names.
    void rename(const std::string& prefix);

    std::array<Parameter*, 4> parameters();
    std::array<const Parameter*, 4> parameters() const;

    // Values (not names or flags) are bit-identical.
    bool same_values(const FfnParams& other) const;
};

Var ffn_forward(Graph& g, const FfnParams& p, Var x);
Tensor ffn_forward(const FfnParams& p, const Tensor& x);

}  // namespace evf
