// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/tensor.hpp"

#include "evf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>

namespace evf {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape [" + std::to_string(rows_) + "x" +
                             std::to_string(cols_) + "]");
    }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) {
            throw DimensionError("ragged initializer rows");
        }
        data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        t(i, i) = 1.0;
    }
    return t;
}

double Tensor::item() const {
    if (rows_ != 1 || cols_ != 1) {
        throw DimensionError("item() on non-scalar tensor " + shape_string());
    }
    return data_[0];
}

std::string Tensor::shape_string() const {
    return "[" + std::to_string(rows_) + "x" + std::to_string(cols_) + "]";
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::bit_equal(const Tensor& other) const noexcept {
    if (!same_shape(other)) {
        return false;
    }
    return data_.empty() ||
           std::memcmp(data_.data(), other.data_.data(), data_.size() * sizeof(double)) == 0;
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace kernels {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b)) {
        throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                             b.shape_string());
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dimensions disagree " + a.shape_string() + " x " +
                             b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a(i, p);
            for (std::size_t j = 0; j < n; ++j) {
                out(i, j) += aip * b(p, j);
            }
        }
    }
    return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("matmul_tn: row counts disagree " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
    Tensor out(m, n);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < m; ++i) {
            const double api = a(p, i);
            for (std::size_t j = 0; j < n; ++j) {
                out(i, j) += api * b(p, j);
            }
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("matmul_nt: column counts disagree " + a.shape_string() + " vs " +
                             b.shape_string());
    }
    const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out(m, n);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) {
                acc += a(i, p) * b(j, p);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    Tensor out(a.cols(), a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += b[i];
    }
    return out;
}

Tensor add_row_vector(const Tensor& x, const Tensor& bias) {
    if (bias.rows() != 1 || bias.cols() != x.cols()) {
        throw DimensionError("add_row_vector: bias " + bias.shape_string() +
                             " does not match rows of " + x.shape_string());
    }
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) += bias(0, j);
        }
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = a;
    for (double& v : out.data()) {
        v *= c;
    }
    return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= b[i];
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto in = x.row(i);
        auto dst = out.row(i);
        const double mx = *std::max_element(in.begin(), in.end());
        double total = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            dst[j] = std::exp(in[j] - mx);
            total += dst[j];
        }
        for (double& v : dst) {
            v /= total;
        }
    }
    return out;
}

Tensor causal_softmax_rows(const Tensor& x) {
    if (x.rows() != x.cols()) {
        throw DimensionError("causal_softmax_rows: expected square scores, got " +
                             x.shape_string());
    }
    Tensor out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mx = x(i, 0);
        for (std::size_t j = 1; j <= i; ++j) {
            mx = std::max(mx, x(i, j));
        }
        double total = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            out(i, j) = std::exp(x(i, j) - mx);
            total += out(i, j);
        }
        for (std::size_t j = 0; j <= i; ++j) {
            out(i, j) /= total;
        }
    }
    return out;
}

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

double gelu(double x) {
    const double inner = kGeluScale * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
    const double inner = kGeluScale * (x + kGeluCubic * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

Tensor gelu(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data()) {
        v = gelu(v);
    }
    return out;
}

Tensor rms_norm_rows(const Tensor& x) {
    Tensor out = x;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const auto in = x.row(i);
        double ms = 0.0;
        for (double v : in) {
            ms += v * v;
        }
        ms /= static_cast<double>(in.size());
        const double inv = 1.0 / std::sqrt(ms + kRmsEpsilon);
        for (double& v : out.row(i)) {
            v *= inv;
        }
    }
    return out;
}

}  // namespace kernels

}  // namespace evf
