// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace evf {

// SplitMix64 finaliser applied to (seed, stream). Used to derive child seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

// Seeded generator with platform-independent sampling. The engine is
// std::mt19937_64 (its output sequence is fixed by the standard); bounded
// integers, uniforms and normals are derived here rather than through the
// implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed), seed_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return engine_(); }
    // Unbiased integer in [0, bound). bound must be positive.
    std::uint64_t uniform_index(std::uint64_t bound);
    // 53-bit uniform in [0, 1).
    double uniform01();
    double normal();

    // Child generator that depends only on (seed(), stream), not on how many
    // values this generator has produced.
    Rng split(std::uint64_t stream) const { return Rng(mix_seed(seed_, stream)); }

private:
    std::mt19937_64 engine_;
    std::uint64_t seed_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Uniformly random k-subset of `pool` by partial Fisher-Yates: for i < k swap
// position i with i + uniform_index(|pool| - i). Returned in pool order of the
// shuffled prefix (callers sort if they need index order).
std::vector<std::size_t> sample_without_replacement(Rng& rng, std::span<const std::size_t> pool,
                                                    std::size_t k);

}  // namespace evf
