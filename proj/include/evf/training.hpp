// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/allocator.hpp"
#include "evf/graph.hpp"
#include "evf/router.hpp"

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evf {

inline constexpr double kDefaultAuxAlpha = 0.001;

// Load statistics of one EVF layer. F counts accepted tokens only, so
// f_image + f_text < 1 whenever tokens were dropped.
struct LayerLoad {
    double f_image = 0.0;  // accepted by the vision FFN / n
    double f_text = 0.0;   // accepted by the language FFN / n
    double g_image = 0.0;  // mean vision routing probability
    double g_text = 0.0;   // mean language routing probability

    double loss() const noexcept { return f_image * g_image + f_text * g_text; }
};

struct LossBreakdown {
    double regressive = 0.0;
    double aux = 0.0;
    double alpha = kDefaultAuxAlpha;
    double total = 0.0;
    std::vector<LayerLoad> layers;
};

// Value-level balancing loss: mean over layers of F_i * G_i + F_t * G_t.
double aux_loss(std::span<const AllocationPlan> plans, std::span<const RoutingDecision> decisions,
                std::vector<LayerLoad>* per_layer = nullptr);

struct AuxLossVar {
    Var value;
    std::vector<LayerLoad> layers;
};

// Differentiable through the G terms (routing probabilities) only.
AuxLossVar aux_loss(Graph& g, std::span<const AllocationPlan> plans,
                    std::span<const Var> probabilities);

// total = regressive + alpha * aux. Throws NumericError on non-finite input.
LossBreakdown total_loss(double regressive, double aux, double alpha);

// Mean next-token cross-entropy.
double regressive_loss(const Tensor& logits, std::span<const std::size_t> targets);
Var regressive_loss(Graph& g, Var logits, std::span<const std::size_t> targets);

struct OptimizerConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    double warmup_ratio = 0.03;
    // Length of the schedule; cosine decay reaches zero at this step.
    std::size_t total_steps = 1000;
    bool cosine_decay = true;
};

// Linear warmup from 0 over ceil(warmup_ratio * total_steps) steps, then cosine decay.
double learning_rate_at(const OptimizerConfig& cfg, std::size_t step);

// Decoupled-weight-decay Adam. State is keyed by parameter name.
class AdamW {
public:
    explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) {}

    const OptimizerConfig& config() const noexcept { return cfg_; }

    // Updates trainable parameters from their grad buffers; frozen ones are not touched.
    // Returns the learning rate used.
    double step(std::span<Parameter* const> params, std::size_t step_index);

private:
    struct Moments {
        Tensor m;
        Tensor v;
        std::size_t updates = 0;
    };

    OptimizerConfig cfg_;
    std::map<std::string, Moments> state_;
};

// Named parameter groups of the micro model.
enum class ParamGroup { embedding, attention, dense_ffn, language_ffn, vision_ffn, router, adapter, head };
std::string_view to_string(ParamGroup g) noexcept;

// Trainability per training stage:
//   1 - vision adapter only
//   2 - adapter and the language backbone (LoRA is modelled as full trainability)
//   3 - vision FFNs and routers only
// `overrides` force individual groups on or off (e.g. for expert-position ablations).
struct StageSchedule {
    int stage = 3;
    std::map<ParamGroup, bool> overrides;

    static StageSchedule for_stage(int stage);
    bool trains(ParamGroup group) const;
};

// Raised by grad_check when a finite-difference probe changes an allocation plan.
class InstanceRejected : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    // Relative error is |a - n| / max(|a|, |n|, relative_floor).
    double relative_floor = 1e-6;
    // Test hook: multiplies the analytic gradient before comparison.
    double analytic_scale = 1.0;
};

struct GradCheckEntry {
    std::string name;
    std::size_t scalars = 0;
    double max_relative_error = 0.0;
    double max_absolute_error = 0.0;
    std::size_t worst_index = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_relative_error = 0.0;
    std::size_t scalars_checked = 0;

    bool passed(double tolerance) const noexcept { return max_relative_error < tolerance; }
};

// One evaluation of the loss on a fresh graph, plus the allocation plans it used.
struct LossProbe {
    Var loss;
    std::vector<AllocationPlan> plans;
};
using LossFunction = std::function<LossProbe(Graph&)>;

// Central finite differences of `loss_fn` against reverse-mode gradients for
// every trainable scalar in `params`. Frozen parameters are skipped. Throws
// InstanceRejected if any probe changes an allocation plan.
GradCheckReport grad_check(std::span<Parameter* const> params, const LossFunction& loss_fn,
                           const GradCheckOptions& options = {});

}  // namespace evf
