// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace evf {

// Dense row-major matrix of doubles. Every tensor in this library is rank 2;
// scalars are 1x1 and vectors are 1xk.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
    Tensor(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Tensor scalar(double v) { return Tensor(1, 1, v); }
    static Tensor identity(std::size_t n);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Value of a 1x1 tensor.
    double item() const;

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    bool same_shape(const Tensor& other) const noexcept {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_string() const;

    void fill(double v);

    // Exact bitwise equality of shape and every element (distinguishes -0.0 and NaN payloads).
    bool bit_equal(const Tensor& other) const noexcept;
    bool all_finite() const noexcept;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

// Value-level kernels. The differentiable graph operations are thin wrappers
// around these, so a graph forward and a direct call are bit-identical.
namespace kernels {

Tensor matmul(const Tensor& a, const Tensor& b);
// a^T * b without materialising the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
// a * b^T without materialising the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
// x[n x k] + bias[1 x k] on every row.
Tensor add_row_vector(const Tensor& x, const Tensor& bias);
Tensor scale(const Tensor& a, double c);
Tensor hadamard(const Tensor& a, const Tensor& b);

// Numerically stable row softmax (max subtraction).
Tensor softmax_rows(const Tensor& x);
// Row softmax restricted to columns j <= i (strict upper triangle gets probability 0).
Tensor causal_softmax_rows(const Tensor& x);

// tanh-approximated GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
double gelu(double x);
double gelu_derivative(double x);
Tensor gelu(const Tensor& x);

// Parameter-free RMS normalisation of each row: x / sqrt(mean(x^2) + eps).
inline constexpr double kRmsEpsilon = 1e-6;
Tensor rms_norm_rows(const Tensor& x);

}  // namespace kernels

}  // namespace evf
