// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace evf {

// Shape disagreement between operands.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Precondition violated by the caller (wrong lengths, wrong plan kind, ...).
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Non-finite input or output where finite values are required.
class NumericError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class ConfigError : public std::invalid_argument {
public:
    ConfigError(std::string field, const std::string& what)
        : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

class EmptyBatchError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace evf
