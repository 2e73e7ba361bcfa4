// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

// Straight-line reference allocator used to cross-check evf::allocate and
// evf::redistribute. Shares only the random engine and subset sampler with the
// library; everything else (scoring, grouping, capacity, top-k selection,
// offer handling) is re-derived here with plain loops.

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace oracle {

enum class Kind { random, gbpr, img_gbpr };

struct Instance {
    // Router probabilities, column 0 language, column 1 vision.
    std::vector<double> p_language;
    std::vector<double> p_vision;
    // Logits decide the preferred FFN for Random and GBPR.
    std::vector<double> z_language;
    std::vector<double> z_vision;
    std::vector<bool> is_image;
    std::vector<std::uint32_t> sequence;
    // Capacity factor as an exact fraction.
    std::size_t factor_num = 3;
    std::size_t factor_den = 2;
    double w_r = 1.0;
    std::uint64_t seed = 0;

    std::size_t size() const { return is_image.size(); }
};

struct Move {
    std::size_t token;
    int from;
    int to;
};

struct Plan {
    std::size_t capacity = 0;
    // -1 dropped, 0 language, 1 vision
    std::vector<int> where;
    std::vector<Move> moved;
};

// ceil(num * n / (den * 2)) in integers.
std::size_t capacity(std::size_t n, std::size_t num, std::size_t den);

Plan allocate(const Instance& in, Kind kind);

}  // namespace oracle
