// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/ffn.hpp"

#include "evf/errors.hpp"

#include <cmath>

namespace evf {

namespace {

Tensor normal_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
    Tensor t(rows, cols);
    const double stddev = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : t.data()) {
        v = stddev * rng.normal();
    }
    return t;
}

}  // namespace

FfnParams FfnParams::zeros(const std::string& prefix, std::size_t width, std::size_t hidden) {
    FfnParams p;
    p.up_weight = Parameter(prefix + ".up.weight", Tensor(width, hidden));
    p.up_bias = Parameter(prefix + ".up.bias", Tensor(1, hidden));
    p.down_weight = Parameter(prefix + ".down.weight", Tensor(hidden, width));
    p.down_bias = Parameter(prefix + ".down.bias", Tensor(1, width));
    return p;
}

FfnParams FfnParams::random(const std::string& prefix, std::size_t width, std::size_t hidden,
                            Rng& rng) {
    FfnParams p = zeros(prefix, width, hidden);
    p.up_weight.value = normal_matrix(width, hidden, rng);
    p.down_weight.value = normal_matrix(hidden, width, rng);
    return p;
}

void FfnParams::set_trainable(bool on) {
    for (Parameter* p : parameters()) {
        p->trainable = on;
    }
}

void FfnParams::rename(const std::string& prefix) {
    up_weight.name = prefix + ".up.weight";
    up_bias.name = prefix + ".up.bias";
    down_weight.name = prefix + ".down.weight";
    down_bias.name = prefix + ".down.bias";
}

std::array<Parameter*, 4> FfnParams::parameters() {
    return {&up_weight, &up_bias, &down_weight, &down_bias};
}

std::array<const Parameter*, 4> FfnParams::parameters() const {
    return {&up_weight, &up_bias, &down_weight, &down_bias};
}

bool FfnParams::same_values(const FfnParams& other) const {
    return up_weight.value.bit_equal(other.up_weight.value) &&
           up_bias.value.bit_equal(other.up_bias.value) &&
           down_weight.value.bit_equal(other.down_weight.value) &&
           down_bias.value.bit_equal(other.down_bias.value);
}

Var ffn_forward(Graph& g, const FfnParams& p, Var x) {
    if (x.value().cols() != p.width()) {
        throw DimensionError("ffn_forward: input " + x.value().shape_string() +
                             " does not match model width " + std::to_string(p.width()));
    }
    Var hidden = ops::add_row_vector(ops::matmul(x, g.param(p.up_weight)), g.param(p.up_bias));
    Var act = ops::gelu(hidden);
    return ops::add_row_vector(ops::matmul(act, g.param(p.down_weight)), g.param(p.down_bias));
}

Tensor ffn_forward(const FfnParams& p, const Tensor& x) {
    Graph g(false);
    return ffn_forward(g, p, g.constant(x)).value();
}

}  // namespace evf
