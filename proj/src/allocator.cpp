// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/allocator.hpp"

#include "evf/errors.hpp"
#include "evf/rng.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace evf {

std::string_view to_string(Modality m) noexcept { return m == Modality::image ? "image" : "text"; }

std::string_view to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::random:
            return "random";
        case Strategy::gbpr:
            return "gbpr";
        case Strategy::img_gbpr:
            return "img_gbpr";
    }
    return "unknown";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "random") return Strategy::random;
    if (name == "gbpr") return Strategy::gbpr;
    if (name == "img_gbpr" || name == "img-gbpr") return Strategy::img_gbpr;
    throw ConfigError("strategy", "unknown allocation strategy '" + std::string(name) + "'");
}

std::size_t ModalityTags::image_count() const noexcept {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Modality::image));
}

std::size_t ModalityTags::text_count() const noexcept { return labels.size() - image_count(); }

std::size_t ModalityTags::group_count() const noexcept {
    if (groups.empty()) {
        return labels.empty() ? 0 : 1;
    }
    return static_cast<std::size_t>(*std::max_element(groups.begin(), groups.end())) + 1;
}

ModalityTags ModalityTags::image_then_text(std::size_t images, std::size_t texts) {
    ModalityTags tags;
    tags.labels.assign(images, Modality::image);
    tags.labels.insert(tags.labels.end(), texts, Modality::text);
    return tags;
}

void CapacityConfig::validate() const {
    if (!(capacity_factor > 0.0) || !std::isfinite(capacity_factor)) {
        throw ConfigError("capacity_factor", "must be a positive finite number");
    }
    if (num_ffns != kNumFfns) {
        throw ConfigError("num_ffns", "exactly two FFNs are supported");
    }
    if (!(redistribution_fraction >= 0.0 && redistribution_fraction <= 1.0)) {
        throw ConfigError("redistribution_fraction", "must lie in [0, 1]");
    }
}

std::size_t compute_capacity(std::size_t n, const CapacityConfig& cfg) {
    if (n == 0) {
        throw EmptyBatchError("compute_capacity: empty batch");
    }
    cfg.validate();
    const double raw = cfg.capacity_factor * static_cast<double>(n) / static_cast<double>(cfg.num_ffns);
    // Absorb representation error so that e.g. 1.2 * 5 / 2 yields 3, not 4.
    const double c = std::ceil(raw - 1e-9 * std::max(1.0, raw));
    return std::max<std::size_t>(1, static_cast<std::size_t>(c));
}

PriorityScores priority_scores(const RoutingDecision& decision, const ModalityTags& tags,
                               Strategy strategy) {
    if (tags.size() != decision.size()) {
        throw ContractError("priority_scores: " + std::to_string(tags.size()) + " tags for " +
                            std::to_string(decision.size()) + " routed tokens");
    }
    PriorityScores out;
    out.strategy = strategy;
    if (strategy == Strategy::random) {
        return out;
    }
    out.scores = decision.probabilities;
    if (strategy == Strategy::img_gbpr) {
        for (std::size_t t = 0; t < tags.size(); ++t) {
            const auto& prior = tags.labels[t] == Modality::image ? kImagePrior : kTextPrior;
            for (std::size_t e = 0; e < kNumFfns; ++e) {
                out.scores(t, e) += prior[e];
            }
        }
    }
    return out;
}

namespace {

void check_inputs(const RoutingDecision& decision, const PriorityScores& scores,
                  const ModalityTags& tags, Strategy strategy) {
    const std::size_t n = decision.size();
    if (tags.size() != n) {
        throw ContractError("allocate: " + std::to_string(tags.size()) + " tags for " +
                            std::to_string(n) + " tokens");
    }
    if (!tags.groups.empty() && tags.groups.size() != n) {
        throw ContractError("allocate: group labels do not cover every token");
    }
    if (decision.probabilities.rows() != n || decision.probabilities.cols() != kNumFfns) {
        throw ContractError("allocate: routing probabilities have shape " +
                            decision.probabilities.shape_string());
    }
    if (strategy != Strategy::random) {
        if (scores.strategy != strategy) {
            throw ContractError("allocate: priority scores were computed for strategy " +
                                std::string(to_string(scores.strategy)));
        }
        if (scores.scores.rows() != n || scores.scores.cols() != kNumFfns) {
            throw ContractError("allocate: priority scores have shape " +
                                scores.scores.shape_string());
        }
    }
}

// Top-`keep` candidates by score in `column` (ties: lower index); returns (kept, rejected).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_by_priority(
    std::vector<std::size_t> candidates, const Tensor& scores, std::size_t column,
    std::size_t keep) {
    std::stable_sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        const double sa = scores(a, column), sb = scores(b, column);
        return sa != sb ? sa > sb : a < b;
    });
    std::vector<std::size_t> kept(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep));
    std::vector<std::size_t> rejected(candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end());
    std::sort(kept.begin(), kept.end());
    std::sort(rejected.begin(), rejected.end());
    return {std::move(kept), std::move(rejected)};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_at_random(
    const std::vector<std::size_t>& candidates, std::size_t keep, Rng rng) {
    std::vector<std::size_t> kept = sample_without_replacement(rng, candidates, keep);
    std::sort(kept.begin(), kept.end());
    std::vector<std::size_t> rejected;
    std::set_difference(candidates.begin(), candidates.end(), kept.begin(), kept.end(),
                        std::back_inserter(rejected));
    return {std::move(kept), std::move(rejected)};
}

// Splits `total` across groups in proportion to their sizes (largest remainder,
// ties to the lower group), so the shares sum to exactly `total`.
std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& sizes) {
    std::size_t n = 0;
    for (std::size_t s : sizes) n += s;
    std::vector<std::size_t> share(sizes.size());
    std::vector<std::size_t> order(sizes.size());
    std::size_t given = 0;
    for (std::size_t g = 0; g < sizes.size(); ++g) {
        share[g] = total * sizes[g] / n;
        given += share[g];
        order[g] = g;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return (total * sizes[a]) % n > (total * sizes[b]) % n;
    });
    for (std::size_t i = 0; given < total; ++i, ++given) {
        ++share[order[i]];
    }
    return share;
}

void rebuild_assignment(AllocationPlan& plan) {
    plan.assignment.assign(plan.num_tokens, kUnassigned);
    for (std::size_t e = 0; e < kNumFfns; ++e) {
        for (std::size_t t : plan.accepted[e]) {
            plan.assignment[t] = static_cast<std::int8_t>(e);
        }
    }
}

}  // namespace

AllocationPlan allocate(const RoutingDecision& decision, const PriorityScores& scores,
                        const ModalityTags& tags, const CapacityConfig& cfg, Strategy strategy) {
    check_inputs(decision, scores, tags, strategy);
    const std::size_t n = decision.size();

    AllocationPlan plan;
    plan.strategy = strategy;
    plan.num_tokens = n;
    plan.capacity = compute_capacity(n, cfg);
    plan.recommended.resize(n);
    for (std::size_t t = 0; t < n; ++t) {
        plan.recommended[t] = strategy == Strategy::img_gbpr
                                  ? preferred_of(scores.scores(t, 0), scores.scores(t, 1))
                                  : decision.preferred[t];
    }

    std::vector<std::size_t> rejected;
    if (strategy == Strategy::random) {
        const std::size_t groups = tags.group_count();
        std::vector<std::array<std::vector<std::size_t>, kNumFfns>> candidates(groups);
        for (std::size_t t = 0; t < n; ++t) {
            candidates[tags.group_of(t)][index_of(plan.recommended[t])].push_back(t);
        }
        std::vector<std::size_t> sizes(groups);
        for (std::uint32_t g = 0; g < groups; ++g) {
            sizes[g] = candidates[g][0].size() + candidates[g][1].size();
        }
        plan.group_capacities = apportion(plan.capacity, sizes);
        const Rng base(cfg.seed);
        for (std::uint32_t g = 0; g < groups; ++g) {
            const std::size_t cap = plan.group_capacities[g];
            for (std::size_t e = 0; e < kNumFfns; ++e) {
                const auto& cand = candidates[g][e];
                auto& acc = plan.accepted[e];
                if (cand.size() <= cap) {
                    acc.insert(acc.end(), cand.begin(), cand.end());
                    continue;
                }
                auto [kept, lost] =
                    split_at_random(cand, cap, base.split(random_selection_stream(g, static_cast<Ffn>(e))));
                acc.insert(acc.end(), kept.begin(), kept.end());
                rejected.insert(rejected.end(), lost.begin(), lost.end());
            }
        }
        for (auto& acc : plan.accepted) {
            std::sort(acc.begin(), acc.end());
        }
    } else {
        std::array<std::vector<std::size_t>, kNumFfns> candidates;
        for (std::size_t t = 0; t < n; ++t) {
            candidates[index_of(plan.recommended[t])].push_back(t);
        }
        for (std::size_t e = 0; e < kNumFfns; ++e) {
            if (candidates[e].size() <= plan.capacity) {
                plan.accepted[e] = std::move(candidates[e]);
                continue;
            }
            auto [kept, lost] = split_by_priority(std::move(candidates[e]), scores.scores, e, plan.capacity);
            plan.accepted[e] = std::move(kept);
            rejected.insert(rejected.end(), lost.begin(), lost.end());
        }
    }
    std::sort(rejected.begin(), rejected.end());

    if (strategy == Strategy::img_gbpr) {
        plan.pending = std::move(rejected);
        plan.awaiting_redistribution = true;
    } else {
        plan.dropped = std::move(rejected);
    }
    rebuild_assignment(plan);
    instrumentation::count_allocation_plan();
    return plan;
}

AllocationPlan redistribute(const AllocationPlan& plan, const RoutingDecision& decision,
                            const PriorityScores& scores, const CapacityConfig& cfg) {
    if (plan.strategy != Strategy::img_gbpr || !plan.awaiting_redistribution) {
        throw ContractError("redistribute: expects an Img-GBPR plan awaiting redistribution, got " +
                            std::string(to_string(plan.strategy)));
    }
    cfg.validate();
    if (decision.size() != plan.num_tokens || scores.scores.rows() != plan.num_tokens) {
        throw ContractError("redistribute: plan and routing inputs disagree on token count");
    }

    AllocationPlan out = plan;
    out.pending.clear();
    out.awaiting_redistribution = false;

    const auto offered_count = static_cast<std::size_t>(
        std::floor(cfg.redistribution_fraction * static_cast<double>(plan.pending.size())));
    Rng rng = Rng(cfg.seed).split(kRedistributionStream);
    std::vector<std::size_t> offered = sample_without_replacement(rng, plan.pending, offered_count);
    std::sort(offered.begin(), offered.end());

    std::vector<std::size_t> placed;
    for (std::size_t e = 0; e < kNumFfns; ++e) {
        const Ffn target = static_cast<Ffn>(e);
        std::vector<std::size_t> offers;
        for (std::size_t t : offered) {
            if (plan.recommended[t] != target) {
                offers.push_back(t);
            }
        }
        const std::size_t used = out.accepted[e].size();
        const std::size_t room = plan.capacity > used ? plan.capacity - used : 0;
        const std::size_t take = std::min(room, offers.size());
        auto [kept, lost] = split_by_priority(std::move(offers), scores.scores, e, take);
        for (std::size_t t : kept) {
            out.redistributed.push_back({t, other(target), target});
            placed.push_back(t);
        }
        auto& acc = out.accepted[e];
        acc.insert(acc.end(), kept.begin(), kept.end());
        std::sort(acc.begin(), acc.end());
    }
    std::sort(placed.begin(), placed.end());
    std::sort(out.redistributed.begin(), out.redistributed.end(),
              [](const RedistributionRecord& a, const RedistributionRecord& b) { return a.token < b.token; });

    std::set_difference(plan.pending.begin(), plan.pending.end(), placed.begin(), placed.end(),
                        std::back_inserter(out.dropped));
    rebuild_assignment(out);
    return out;
}

AllocationPlan dispatch(const RoutingDecision& decision, const ModalityTags& tags,
                        const CapacityConfig& cfg, Strategy strategy) {
    const PriorityScores scores = priority_scores(decision, tags, strategy);
    AllocationPlan plan = allocate(decision, scores, tags, cfg, strategy);
    if (strategy == Strategy::img_gbpr) {
        plan = redistribute(plan, decision, scores, cfg);
    }
    return plan;
}

double AllocationStats::image_success_rate() const noexcept {
    return image_total == 0 ? 1.0 : static_cast<double>(image_accepted) / static_cast<double>(image_total);
}

double AllocationStats::text_success_rate() const noexcept {
    return text_total == 0 ? 1.0 : static_cast<double>(text_accepted) / static_cast<double>(text_total);
}

AllocationStats allocation_stats(const AllocationPlan& plan, const ModalityTags& tags) {
    if (tags.size() != plan.num_tokens) {
        throw ContractError("allocation_stats: tags do not match plan size");
    }
    AllocationStats s;
    s.total = plan.num_tokens;
    for (std::size_t e = 0; e < kNumFfns; ++e) {
        s.loads[e] = plan.accepted[e].size();
        s.accepted += s.loads[e];
    }
    s.dropped = s.total - s.accepted;
    s.redistributed = plan.redistributed.size();
    if (s.total > 0) {
        s.success_rate = static_cast<double>(s.accepted) / static_cast<double>(s.total);
        s.drop_rate = 1.0 - s.success_rate;
    }
    for (std::size_t t = 0; t < plan.num_tokens; ++t) {
        const bool ok = plan.is_accepted(t);
        if (tags.labels[t] == Modality::image) {
            ++s.image_total;
            s.image_accepted += ok ? 1 : 0;
        } else {
            ++s.text_total;
            s.text_accepted += ok ? 1 : 0;
        }
    }
    return s;
}

}  // namespace evf
