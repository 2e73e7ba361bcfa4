// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/tensor.hpp"

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace evf {

// A named trainable tensor. `trainable == false` is the only freezing mechanism:
// frozen parameters never receive gradient and the optimizer never writes them.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string name, Tensor value, bool trainable = true);

    void zero_grad();
};

class Graph;

// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    std::size_t id() const noexcept { return id_; }
    Graph* graph() const noexcept { return graph_; }
    bool valid() const noexcept { return graph_ != nullptr; }

private:
    friend class Graph;
    Var(Graph* g, std::size_t id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    std::size_t id_ = 0;
};

// Tape of recorded operations for reverse-mode differentiation. Nodes are
// appended in execution order, so the tape is already topologically sorted.
class Graph {
public:
    // grad_in[i] is null when input i does not need a gradient.
    using Backward = std::function<void(const Tensor& grad_out, std::span<Tensor* const> grad_in)>;

    explicit Graph(bool record_gradients = true) : record_(record_gradients) {}
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Var constant(Tensor value);
    // Binds a parameter as a leaf. Binding the same parameter twice returns the same node.
    Var param(const Parameter& p);

    Var record(Tensor value, std::span<const Var> inputs, Backward backward);

    const Tensor& value(Var v) const;
    // Gradient from the last backward(); an empty tensor when the node was not reached.
    const Tensor& grad(Var v) const;
    const Tensor* grad_of(const Parameter& p) const;

    void backward(Var loss);

    // p.grad += dLoss/dp for every trainable parameter bound to this graph.
    void accumulate_into(std::span<Parameter* const> params) const;

    bool records_gradients() const noexcept { return record_; }
    std::size_t node_count() const noexcept { return nodes_.size(); }
    std::size_t backward_visits() const noexcept { return visits_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        Backward backward;
        bool requires_grad = false;
    };

    const Node& node(Var v) const;

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    bool record_;
    std::size_t visits_ = 0;
};

// Differentiable operations. All operands must live on the same graph.
namespace ops {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var add_row_vector(Var x, Var bias);
Var scale(Var x, double c);
Var hadamard(Var a, Var b);
Var gelu(Var x);
Var softmax_rows(Var x);
Var causal_softmax_rows(Var x);
Var rms_norm_rows(Var x);
Var transpose(Var x);

Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);

// out[k] = x[rows[k]]
Var gather_rows(Var x, std::span<const std::size_t> rows);
// out is [total_rows x cols] of zeros with out[rows[k]] = src[k]. rows must be distinct.
Var scatter_rows(Var src, std::span<const std::size_t> rows, std::size_t total_rows);
// out[k] = x(rows[k], col), shape [rows.size() x 1]
Var take_column_entries(Var x, std::span<const std::size_t> rows, std::size_t col);
// out[i, :] = x[i, :] * s[i, 0]
Var scale_rows(Var x, Var s);

// Scalar reductions (1x1 results).
Var sum(Var x);
Var column_mean(Var x, std::size_t col);
// Mean negative log-likelihood of targets[i] under softmax(logits[i]).
Var cross_entropy(Var logits, std::span<const std::size_t> targets);

}  // namespace ops

}  // namespace evf
