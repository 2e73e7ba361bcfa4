// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/graph.hpp"

#include "evf/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace evf {

Parameter::Parameter(std::string n, Tensor v, bool t)
    : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()), trainable(t) {}

void Parameter::zero_grad() {
    if (!grad.same_shape(value)) {
        grad = Tensor(value.rows(), value.cols());
    } else {
        grad.fill(0.0);
    }
}

const Tensor& Var::value() const {
    if (graph_ == nullptr) {
        throw ContractError("value() on an unbound Var");
    }
    return graph_->value(*this);
}

const Graph::Node& Graph::node(Var v) const {
    if (v.graph_ != this || v.id_ >= nodes_.size()) {
        throw ContractError("Var does not belong to this graph");
    }
    return nodes_[v.id_];
}

Var Graph::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

Var Graph::param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) {
        return Var(this, it->second);
    }
    Node n;
    n.value = p.value;
    n.requires_grad = record_ && p.trainable;
    nodes_.push_back(std::move(n));
    param_nodes_.emplace(&p, nodes_.size() - 1);
    return Var(this, nodes_.size() - 1);
}

Var Graph::record(Tensor value, std::span<const Var> inputs, Backward backward) {
    Node n;
    n.value = std::move(value);
    if (record_) {
        for (const Var& in : inputs) {
            if (in.graph_ != this) {
                throw ContractError("operands belong to different graphs");
            }
            n.inputs.push_back(in.id_);
            n.requires_grad = n.requires_grad || nodes_[in.id_].requires_grad;
        }
        if (n.requires_grad) {
            n.backward = std::move(backward);
        }
    }
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

const Tensor& Graph::grad(Var v) const { return node(v).grad; }

const Tensor* Graph::grad_of(const Parameter& p) const {
    auto it = param_nodes_.find(&p);
    if (it == param_nodes_.end() || nodes_[it->second].grad.empty()) {
        return nullptr;
    }
    return &nodes_[it->second].grad;
}

void Graph::backward(Var loss) {
    const Node& root = node(loss);
    if (root.value.rows() != 1 || root.value.cols() != 1) {
        throw ContractError("backward requires a scalar loss, got " + root.value.shape_string());
    }
    for (Node& n : nodes_) {
        n.grad = Tensor();
    }
    visits_ = 0;
    if (!record_) {
        return;
    }
    nodes_[loss.id_].grad = Tensor::scalar(1.0);

    std::vector<Tensor*> grad_in;
    for (std::size_t i = loss.id_ + 1; i-- > 0;) {
        Node& n = nodes_[i];
        ++visits_;
        if (!n.requires_grad || n.grad.empty() || !n.backward) {
            continue;
        }
        grad_in.clear();
        for (std::size_t in : n.inputs) {
            Node& src = nodes_[in];
            if (!src.requires_grad) {
                grad_in.push_back(nullptr);
                continue;
            }
            if (src.grad.empty()) {
                src.grad = Tensor(src.value.rows(), src.value.cols());
            }
            grad_in.push_back(&src.grad);
        }
        n.backward(n.grad, grad_in);
    }
}

void Graph::accumulate_into(std::span<Parameter* const> params) const {
    for (Parameter* p : params) {
        if (!p->trainable) {
            continue;
        }
        const Tensor* g = grad_of(*p);
        if (g == nullptr) {
            continue;
        }
        if (!p->grad.same_shape(p->value)) {
            p->zero_grad();
        }
        for (std::size_t i = 0; i < g->size(); ++i) {
            p->grad[i] += (*g)[i];
        }
    }
}

namespace ops {

namespace {

void add_into(Tensor* dst, const Tensor& src) {
    if (dst == nullptr) {
        return;
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        (*dst)[i] += src[i];
    }
}

Graph& graph_of(Var a) {
    if (!a.valid()) {
        throw ContractError("operation on an unbound Var");
    }
    return *a.graph();
}

}  // namespace

Var matmul(Var a, Var b) {
    Graph& g = graph_of(a);
    Tensor av = a.value(), bv = b.value();
    Tensor out = kernels::matmul(av, bv);
    const std::array inputs{a, b};
    return g.record(std::move(out), inputs,
                    [av = std::move(av), bv = std::move(bv)](const Tensor& go,
                                                             std::span<Tensor* const> gi) {
                        if (gi[0] != nullptr) add_into(gi[0], kernels::matmul_nt(go, bv));
                        if (gi[1] != nullptr) add_into(gi[1], kernels::matmul_tn(av, go));
                    });
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a);
    const std::array inputs{a, b};
    return g.record(kernels::add(a.value(), b.value()), inputs,
                    [](const Tensor& go, std::span<Tensor* const> gi) {
                        add_into(gi[0], go);
                        add_into(gi[1], go);
                    });
}

Var add_row_vector(Var x, Var bias) {
    Graph& g = graph_of(x);
    const std::array inputs{x, bias};
    return g.record(kernels::add_row_vector(x.value(), bias.value()), inputs,
                    [](const Tensor& go, std::span<Tensor* const> gi) {
                        add_into(gi[0], go);
                        if (gi[1] != nullptr) {
                            for (std::size_t i = 0; i < go.rows(); ++i) {
                                for (std::size_t j = 0; j < go.cols(); ++j) {
                                    (*gi[1])(0, j) += go(i, j);
                                }
                            }
                        }
                    });
}

Var scale(Var x, double c) {
    Graph& g = graph_of(x);
    const std::array inputs{x};
    return g.record(kernels::scale(x.value(), c), inputs,
                    [c](const Tensor& go, std::span<Tensor* const> gi) {
                        add_into(gi[0], kernels::scale(go, c));
                    });
}

Var hadamard(Var a, Var b) {
    Graph& g = graph_of(a);
    Tensor av = a.value(), bv = b.value();
    Tensor out = kernels::hadamard(av, bv);
    const std::array inputs{a, b};
    return g.record(std::move(out), inputs,
                    [av = std::move(av), bv = std::move(bv)](const Tensor& go,
                                                             std::span<Tensor* const> gi) {
                        if (gi[0] != nullptr) add_into(gi[0], kernels::hadamard(go, bv));
                        if (gi[1] != nullptr) add_into(gi[1], kernels::hadamard(go, av));
                    });
}

Var gelu(Var x) {
    Graph& g = graph_of(x);
    Tensor xv = x.value();
    Tensor out = kernels::gelu(xv);
    const std::array inputs{x};
    return g.record(std::move(out), inputs,
                    [xv = std::move(xv)](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t i = 0; i < go.size(); ++i) {
                            (*gi[0])[i] += go[i] * kernels::gelu_derivative(xv[i]);
                        }
                    });
}

namespace {

// Shared backward for both softmax flavours: masked entries have y == 0.
Graph::Backward softmax_backward(Tensor y) {
    return [y = std::move(y)](const Tensor& go, std::span<Tensor* const> gi) {
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                dot += go(i, j) * y(i, j);
            }
            for (std::size_t j = 0; j < y.cols(); ++j) {
                (*gi[0])(i, j) += y(i, j) * (go(i, j) - dot);
            }
        }
    };
}

}  // namespace

Var softmax_rows(Var x) {
    Graph& g = graph_of(x);
    Tensor y = kernels::softmax_rows(x.value());
    const std::array inputs{x};
    return g.record(y, inputs, softmax_backward(y));
}

Var causal_softmax_rows(Var x) {
    Graph& g = graph_of(x);
    Tensor y = kernels::causal_softmax_rows(x.value());
    const std::array inputs{x};
    return g.record(y, inputs, softmax_backward(y));
}

Var rms_norm_rows(Var x) {
    Graph& g = graph_of(x);
    Tensor xv = x.value();
    Tensor out = kernels::rms_norm_rows(xv);
    const std::array inputs{x};
    return g.record(std::move(out), inputs,
                    [xv = std::move(xv)](const Tensor& go, std::span<Tensor* const> gi) {
                        const double width = static_cast<double>(xv.cols());
                        for (std::size_t i = 0; i < xv.rows(); ++i) {
                            double ms = 0.0, dot = 0.0;
                            for (std::size_t j = 0; j < xv.cols(); ++j) {
                                ms += xv(i, j) * xv(i, j);
                                dot += go(i, j) * xv(i, j);
                            }
                            ms /= width;
                            const double r = 1.0 / std::sqrt(ms + kernels::kRmsEpsilon);
                            const double coef = r * r * r * dot / width;
                            for (std::size_t j = 0; j < xv.cols(); ++j) {
                                (*gi[0])(i, j) += r * go(i, j) - coef * xv(i, j);
                            }
                        }
                    });
}

Var transpose(Var x) {
    Graph& g = graph_of(x);
    const std::array inputs{x};
    return g.record(kernels::transpose(x.value()), inputs,
                    [](const Tensor& go, std::span<Tensor* const> gi) {
                        add_into(gi[0], kernels::transpose(go));
                    });
}

Var slice_rows(Var x, std::size_t begin, std::size_t count) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    if (begin + count > xv.rows()) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of range for " +
                             xv.shape_string());
    }
    const std::size_t cols = xv.cols();
    std::vector<double> data(xv.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                             xv.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * cols));
    const std::array inputs{x};
    return g.record(Tensor(count, cols, std::move(data)), inputs,
                    [begin, cols](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t i = 0; i < go.size(); ++i) {
                            (*gi[0])[begin * cols + i] += go[i];
                        }
                    });
}

Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    if (begin + count > xv.cols()) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " +
                             std::to_string(begin + count) + ") out of range for " +
                             xv.shape_string());
    }
    Tensor out(xv.rows(), count);
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        for (std::size_t j = 0; j < count; ++j) {
            out(i, j) = xv(i, begin + j);
        }
    }
    const std::array inputs{x};
    return g.record(std::move(out), inputs,
                    [begin](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t i = 0; i < go.rows(); ++i) {
                            for (std::size_t j = 0; j < go.cols(); ++j) {
                                (*gi[0])(i, begin + j) += go(i, j);
                            }
                        }
                    });
}

Var concat_rows(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ContractError("concat_rows: no inputs");
    }
    Graph& g = graph_of(parts.front());
    const std::size_t cols = parts.front().value().cols();
    std::vector<double> data;
    std::vector<std::size_t> offsets;
    std::size_t rows = 0;
    for (const Var& p : parts) {
        const Tensor& v = p.value();
        if (v.cols() != cols) {
            throw DimensionError("concat_rows: column mismatch " + v.shape_string());
        }
        offsets.push_back(rows);
        rows += v.rows();
        data.insert(data.end(), v.data().begin(), v.data().end());
    }
    return g.record(Tensor(rows, cols, std::move(data)), parts,
                    [offsets, cols](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t k = 0; k < gi.size(); ++k) {
                            if (gi[k] == nullptr) continue;
                            for (std::size_t i = 0; i < gi[k]->size(); ++i) {
                                (*gi[k])[i] += go[offsets[k] * cols + i];
                            }
                        }
                    });
}

Var concat_cols(std::span<const Var> parts) {
    if (parts.empty()) {
        throw ContractError("concat_cols: no inputs");
    }
    Graph& g = graph_of(parts.front());
    const std::size_t rows = parts.front().value().rows();
    std::vector<std::size_t> offsets;
    std::size_t cols = 0;
    for (const Var& p : parts) {
        if (p.value().rows() != rows) {
            throw DimensionError("concat_cols: row mismatch " + p.value().shape_string());
        }
        offsets.push_back(cols);
        cols += p.value().cols();
    }
    Tensor out(rows, cols);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& v = parts[k].value();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < v.cols(); ++j) {
                out(i, offsets[k] + j) = v(i, j);
            }
        }
    }
    return g.record(std::move(out), parts,
                    [offsets](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t k = 0; k < gi.size(); ++k) {
                            if (gi[k] == nullptr) continue;
                            for (std::size_t i = 0; i < gi[k]->rows(); ++i) {
                                for (std::size_t j = 0; j < gi[k]->cols(); ++j) {
                                    (*gi[k])(i, j) += go(i, offsets[k] + j);
                                }
                            }
                        }
                    });
}

Var gather_rows(Var x, std::span<const std::size_t> rows) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    Tensor out(rows.size(), xv.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= xv.rows()) {
            throw DimensionError("gather_rows: row " + std::to_string(rows[k]) +
                                 " out of range for " + xv.shape_string());
        }
        std::copy(xv.row(rows[k]).begin(), xv.row(rows[k]).end(), out.row(k).begin());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const std::array inputs{x};
    return g.record(std::move(out), inputs,
                    [idx = std::move(idx)](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t k = 0; k < idx.size(); ++k) {
                            auto dst = gi[0]->row(idx[k]);
                            const auto src = go.row(k);
                            for (std::size_t j = 0; j < src.size(); ++j) {
                                dst[j] += src[j];
                            }
                        }
                    });
}

Var scatter_rows(Var src, std::span<const std::size_t> rows, std::size_t total_rows) {
    Graph& g = graph_of(src);
    const Tensor& sv = src.value();
    if (rows.size() != sv.rows()) {
        throw DimensionError("scatter_rows: " + std::to_string(rows.size()) +
                             " indices for source " + sv.shape_string());
    }
    Tensor out(total_rows, sv.cols());
    std::vector<bool> seen(total_rows, false);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= total_rows || seen[rows[k]]) {
            throw ContractError("scatter_rows: index " + std::to_string(rows[k]) +
                                " out of range or repeated");
        }
        seen[rows[k]] = true;
        std::copy(sv.row(k).begin(), sv.row(k).end(), out.row(rows[k]).begin());
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const std::array inputs{src};
    return g.record(std::move(out), inputs,
                    [idx = std::move(idx)](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t k = 0; k < idx.size(); ++k) {
                            auto dst = gi[0]->row(k);
                            const auto from = go.row(idx[k]);
                            for (std::size_t j = 0; j < dst.size(); ++j) {
                                dst[j] += from[j];
                            }
                        }
                    });
}

Var take_column_entries(Var x, std::span<const std::size_t> rows, std::size_t col) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    if (col >= xv.cols()) {
        throw DimensionError("take_column_entries: column " + std::to_string(col) +
                             " out of range for " + xv.shape_string());
    }
    Tensor out(rows.size(), 1);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        if (rows[k] >= xv.rows()) {
            throw DimensionError("take_column_entries: row out of range");
        }
        out(k, 0) = xv(rows[k], col);
    }
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    const std::array inputs{x};
    return g.record(std::move(out), inputs,
                    [idx = std::move(idx), col](const Tensor& go, std::span<Tensor* const> gi) {
                        for (std::size_t k = 0; k < idx.size(); ++k) {
                            (*gi[0])(idx[k], col) += go(k, 0);
                        }
                    });
}

Var scale_rows(Var x, Var s) {
    Graph& g = graph_of(x);
    Tensor xv = x.value(), sv = s.value();
    if (sv.cols() != 1 || sv.rows() != xv.rows()) {
        throw DimensionError("scale_rows: scale " + sv.shape_string() + " for rows of " +
                             xv.shape_string());
    }
    Tensor out = xv;
    for (std::size_t i = 0; i < out.rows(); ++i) {
        for (double& v : out.row(i)) {
            v *= sv(i, 0);
        }
    }
    const std::array inputs{x, s};
    return g.record(std::move(out), inputs,
                    [xv = std::move(xv), sv = std::move(sv)](const Tensor& go,
                                                             std::span<Tensor* const> gi) {
                        for (std::size_t i = 0; i < xv.rows(); ++i) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < xv.cols(); ++j) {
                                if (gi[0] != nullptr) (*gi[0])(i, j) += go(i, j) * sv(i, 0);
                                acc += go(i, j) * xv(i, j);
                            }
                            if (gi[1] != nullptr) (*gi[1])(i, 0) += acc;
                        }
                    });
}

Var sum(Var x) {
    Graph& g = graph_of(x);
    double total = 0.0;
    for (double v : x.value().data()) {
        total += v;
    }
    const std::array inputs{x};
    return g.record(Tensor::scalar(total), inputs,
                    [](const Tensor& go, std::span<Tensor* const> gi) {
                        const double d = go.item();
                        for (double& v : gi[0]->data()) {
                            v += d;
                        }
                    });
}

Var column_mean(Var x, std::size_t col) {
    Graph& g = graph_of(x);
    const Tensor& xv = x.value();
    if (col >= xv.cols() || xv.rows() == 0) {
        throw DimensionError("column_mean: column " + std::to_string(col) + " of " +
                             xv.shape_string());
    }
    double total = 0.0;
    for (std::size_t i = 0; i < xv.rows(); ++i) {
        total += xv(i, col);
    }
    const double n = static_cast<double>(xv.rows());
    const std::array inputs{x};
    return g.record(Tensor::scalar(total / n), inputs,
                    [col, n](const Tensor& go, std::span<Tensor* const> gi) {
                        const double d = go.item() / n;
                        for (std::size_t i = 0; i < gi[0]->rows(); ++i) {
                            (*gi[0])(i, col) += d;
                        }
                    });
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets) {
    Graph& g = graph_of(logits);
    const Tensor& z = logits.value();
    if (targets.size() != z.rows() || z.rows() == 0) {
        throw ContractError("cross_entropy: " + std::to_string(targets.size()) +
                            " targets for logits " + z.shape_string());
    }
    for (std::size_t t : targets) {
        if (t >= z.cols()) {
            throw ContractError("cross_entropy: target " + std::to_string(t) +
                                " outside vocabulary of " + std::to_string(z.cols()));
        }
    }
    Tensor probs = kernels::softmax_rows(z);
    double total = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        const auto row = z.row(i);
        const double mx = *std::max_element(row.begin(), row.end());
        double lse = 0.0;
        for (double v : row) {
            lse += std::exp(v - mx);
        }
        total += (std::log(lse) + mx) - z(i, targets[i]);
    }
    const double n = static_cast<double>(z.rows());
    std::vector<std::size_t> tgt(targets.begin(), targets.end());
    const std::array inputs{logits};
    return g.record(Tensor::scalar(total / n), inputs,
                    [probs = std::move(probs), tgt = std::move(tgt), n](
                        const Tensor& go, std::span<Tensor* const> gi) {
                        const double d = go.item() / n;
                        for (std::size_t i = 0; i < probs.rows(); ++i) {
                            for (std::size_t j = 0; j < probs.cols(); ++j) {
                                const double onehot = j == tgt[i] ? 1.0 : 0.0;
                                (*gi[0])(i, j) += d * (probs(i, j) - onehot);
                            }
                        }
                    });
}

}  // namespace ops

}  // namespace evf
