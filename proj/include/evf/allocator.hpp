// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/router.hpp"
#include "evf/tensor.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace evf {

enum class Modality : std::uint8_t { image, text };
std::string_view to_string(Modality m) noexcept;

enum class Strategy : std::uint8_t { random, gbpr, img_gbpr };
std::string_view to_string(Strategy s) noexcept;
// Accepts "random", "gbpr", "img_gbpr" / "img-gbpr". Throws ConfigError otherwise.
Strategy parse_strategy(std::string_view name);

// Per-token modality labels plus, optionally, the sequence each token belongs
// to within the batch. Empty `groups` means the whole batch is one sequence.
struct ModalityTags {
    std::vector<Modality> labels;
    std::vector<std::uint32_t> groups;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t image_count() const noexcept;
    std::size_t text_count() const noexcept;
    std::uint32_t group_of(std::size_t token) const noexcept {
        return groups.empty() ? 0U : groups[token];
    }
    std::size_t group_count() const noexcept;

    static ModalityTags image_then_text(std::size_t images, std::size_t texts);
};

struct CapacityConfig {
    double capacity_factor = 1.5;
    std::size_t num_ffns = kNumFfns;
    // Share of Img-GBPR rejects re-offered to the other FFN.
    double redistribution_fraction = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

// ceil(capacity_factor * n / num_ffns). Throws EmptyBatchError when n == 0.
std::size_t compute_capacity(std::size_t n, const CapacityConfig& cfg);

// Modality priors added to routing probabilities under Img-GBPR.
inline constexpr std::array<double, kNumFfns> kImagePrior{0.0, 1.0};
inline constexpr std::array<double, kNumFfns> kTextPrior{1.0, 0.0};

struct PriorityScores {
    Tensor scores;  // n x 2; empty under Strategy::random
    Strategy strategy = Strategy::gbpr;
};

PriorityScores priority_scores(const RoutingDecision& decision, const ModalityTags& tags,
                               Strategy strategy);

struct RedistributionRecord {
    std::size_t token = 0;
    Ffn from = Ffn::language;
    Ffn to = Ffn::vision;

    bool operator==(const RedistributionRecord&) const = default;
};

inline constexpr std::int8_t kUnassigned = -1;

// Result of token allocation. Every token ends up in exactly one of
// accepted[language], accepted[vision], dropped (or pending, between
// allocate() and redistribute() for Img-GBPR).
struct AllocationPlan {
    Strategy strategy = Strategy::gbpr;
    std::size_t num_tokens = 0;
    // Per-FFN capacity for the whole batch.
    std::size_t capacity = 0;
    // Random allocation enforces capacity per sequence: C split across groups
    // in proportion to group size (largest remainder). One entry per group.
    std::vector<std::size_t> group_capacities;
    // FFN each token was recommended to before capacity was applied.
    std::vector<Ffn> recommended;
    // Token indices, ascending.
    std::array<std::vector<std::size_t>, kNumFfns> accepted;
    std::vector<std::size_t> dropped;
    // Img-GBPR rejects awaiting redistribute().
    std::vector<std::size_t> pending;
    bool awaiting_redistribution = false;
    // Ascending by token.
    std::vector<RedistributionRecord> redistributed;
    // Per token: FFN index, or kUnassigned.
    std::vector<std::int8_t> assignment;

    const std::vector<std::size_t>& accepted_by(Ffn f) const { return accepted[index_of(f)]; }
    std::size_t load(Ffn f) const { return accepted[index_of(f)].size(); }
    bool is_accepted(std::size_t token) const { return assignment[token] != kUnassigned; }

    bool operator==(const AllocationPlan&) const = default;
};

// Capacity allocation without redistribution. Tokens are grouped by their
// recommended FFN (router argmax for Random/GBPR, priority-score argmax for
// Img-GBPR). Over-capacity FFNs keep:
//   Random   - a seeded uniform subset per sequence, within that sequence's
//              share of C;
//   GBPR     - the C highest scores over the batch (ties: lower index);
//   Img-GBPR - as GBPR on the modality-adjusted scores; rejects go to `pending`.
// Random and GBPR drop their rejects.
AllocationPlan allocate(const RoutingDecision& decision, const PriorityScores& scores,
                        const ModalityTags& tags, const CapacityConfig& cfg, Strategy strategy);

// Offers a seeded random floor(w_r * |pending|) subset of the pending rejects to
// their other FFN, which accepts them in descending order of its own score column
// up to its remaining capacity. Everything left over is dropped.
AllocationPlan redistribute(const AllocationPlan& plan, const RoutingDecision& decision,
                            const PriorityScores& scores, const CapacityConfig& cfg);

// allocate() followed by redistribute() when the strategy is Img-GBPR.
AllocationPlan dispatch(const RoutingDecision& decision, const ModalityTags& tags,
                        const CapacityConfig& cfg, Strategy strategy);

// RNG stream ids derived from CapacityConfig::seed.
inline constexpr std::uint64_t kRedistributionStream = 0;
constexpr std::uint64_t random_selection_stream(std::uint32_t group, Ffn f) noexcept {
    return 1 + 2 * static_cast<std::uint64_t>(group) + index_of(f);
}

struct AllocationStats {
    std::size_t total = 0;
    std::size_t accepted = 0;
    std::size_t dropped = 0;
    std::size_t redistributed = 0;
    double success_rate = 1.0;
    double drop_rate = 0.0;
    std::array<std::size_t, kNumFfns> loads{};
    std::size_t image_total = 0;
    std::size_t image_accepted = 0;
    std::size_t text_total = 0;
    std::size_t text_accepted = 0;

    double image_success_rate() const noexcept;
    double text_success_rate() const noexcept;
};

AllocationStats allocation_stats(const AllocationPlan& plan, const ModalityTags& tags);

}  // namespace evf
