// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/training.hpp"

#include "evf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace evf {

namespace {

LayerLoad count_load(const AllocationPlan& plan, const Tensor& probabilities) {
    if (plan.num_tokens == 0 || probabilities.rows() != plan.num_tokens) {
        throw ContractError("aux_loss: plan and routing probabilities disagree on token count");
    }
    const double n = static_cast<double>(plan.num_tokens);
    LayerLoad load;
    load.f_image = static_cast<double>(plan.load(Ffn::vision)) / n;
    load.f_text = static_cast<double>(plan.load(Ffn::language)) / n;
    for (std::size_t t = 0; t < plan.num_tokens; ++t) {
        load.g_image += probabilities(t, index_of(Ffn::vision));
        load.g_text += probabilities(t, index_of(Ffn::language));
    }
    load.g_image /= n;
    load.g_text /= n;
    return load;
}

}  // namespace

double aux_loss(std::span<const AllocationPlan> plans, std::span<const RoutingDecision> decisions,
                std::vector<LayerLoad>* per_layer) {
    if (plans.empty() || plans.size() != decisions.size()) {
        throw ContractError("aux_loss: need one plan and one routing decision per EVF layer");
    }
    double total = 0.0;
    for (std::size_t l = 0; l < plans.size(); ++l) {
        const LayerLoad load = count_load(plans[l], decisions[l].probabilities);
        total += load.loss();
        if (per_layer != nullptr) {
            per_layer->push_back(load);
        }
    }
    return total / static_cast<double>(plans.size());
}

AuxLossVar aux_loss(Graph&, std::span<const AllocationPlan> plans,
                    std::span<const Var> probabilities) {
    if (plans.empty() || plans.size() != probabilities.size()) {
        throw ContractError("aux_loss: need one plan and one probability tensor per EVF layer");
    }
    AuxLossVar out;
    Var total;
    for (std::size_t l = 0; l < plans.size(); ++l) {
        const LayerLoad load = count_load(plans[l], probabilities[l].value());
        out.layers.push_back(load);
        Var g_image = ops::column_mean(probabilities[l], index_of(Ffn::vision));
        Var g_text = ops::column_mean(probabilities[l], index_of(Ffn::language));
        Var layer_loss = ops::add(ops::scale(g_image, load.f_image), ops::scale(g_text, load.f_text));
        total = l == 0 ? layer_loss : ops::add(total, layer_loss);
    }
    out.value = ops::scale(total, 1.0 / static_cast<double>(plans.size()));
    return out;
}

LossBreakdown total_loss(double regressive, double aux, double alpha) {
    if (!std::isfinite(regressive) || !std::isfinite(aux) || !std::isfinite(alpha)) {
        throw NumericError("total_loss: non-finite input");
    }
    LossBreakdown b;
    b.regressive = regressive;
    b.aux = aux;
    b.alpha = alpha;
    b.total = regressive + alpha * aux;
    return b;
}

double regressive_loss(const Tensor& logits, std::span<const std::size_t> targets) {
    Graph g(false);
    return regressive_loss(g, g.constant(logits), targets).value().item();
}

Var regressive_loss(Graph& g, Var logits, std::span<const std::size_t> targets) {
    (void)g;
    return ops::cross_entropy(logits, targets);
}

double learning_rate_at(const OptimizerConfig& cfg, std::size_t step) {
    const std::size_t total = std::max<std::size_t>(cfg.total_steps, 1);
    const auto warmup = static_cast<std::size_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total)));
    if (step < warmup) {
        return cfg.learning_rate * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (!cfg.cosine_decay || total <= warmup) {
        return cfg.learning_rate;
    }
    const double progress = std::min(
        1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
    return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * progress));
}

double AdamW::step(std::span<Parameter* const> params, std::size_t step_index) {
    const double lr = learning_rate_at(cfg_, step_index);
    for (Parameter* p : params) {
        if (!p->trainable) {
            continue;
        }
        if (!p->grad.same_shape(p->value)) {
            throw ContractError("AdamW: gradient of '" + p->name + "' has shape " +
                                p->grad.shape_string());
        }
        Moments& s = state_[p->name];
        if (!s.m.same_shape(p->value)) {
            s.m = Tensor(p->value.rows(), p->value.cols());
            s.v = Tensor(p->value.rows(), p->value.cols());
            s.updates = 0;
        }
        ++s.updates;
        const double bias1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.updates));
        const double bias2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.updates));
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double grad = p->grad[i];
            s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * grad;
            s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * grad * grad;
            const double m_hat = s.m[i] / bias1;
            const double v_hat = s.v[i] / bias2;
            p->value[i] -= lr * (m_hat / (std::sqrt(v_hat) + cfg_.epsilon) +
                                 cfg_.weight_decay * p->value[i]);
        }
    }
    return lr;
}

std::string_view to_string(ParamGroup g) noexcept {
    switch (g) {
        case ParamGroup::embedding: return "embedding";
        case ParamGroup::attention: return "attention";
        case ParamGroup::dense_ffn: return "dense_ffn";
        case ParamGroup::language_ffn: return "language_ffn";
        case ParamGroup::vision_ffn: return "vision_ffn";
        case ParamGroup::router: return "router";
        case ParamGroup::adapter: return "adapter";
        case ParamGroup::head: return "head";
    }
    return "unknown";
}

StageSchedule StageSchedule::for_stage(int stage) {
    if (stage < 1 || stage > 3) {
        throw ConfigError("stage", "must be 1, 2 or 3");
    }
    StageSchedule s;
    s.stage = stage;
    return s;
}

bool StageSchedule::trains(ParamGroup group) const {
    if (auto it = overrides.find(group); it != overrides.end()) {
        return it->second;
    }
    switch (stage) {
        case 1:
            return group == ParamGroup::adapter;
        case 2:
            return group != ParamGroup::vision_ffn && group != ParamGroup::router;
        case 3:
            return group == ParamGroup::vision_ffn || group == ParamGroup::router;
        default:
            return false;
    }
}

GradCheckReport grad_check(std::span<Parameter* const> params, const LossFunction& loss_fn,
                           const GradCheckOptions& options) {
    std::vector<AllocationPlan> reference_plans;
    std::vector<Tensor> analytic;
    {
        Graph g;
        LossProbe probe = loss_fn(g);
        g.backward(probe.loss);
        reference_plans = std::move(probe.plans);
        for (Parameter* p : params) {
            const Tensor* grad = p->trainable ? g.grad_of(*p) : nullptr;
            analytic.push_back(grad != nullptr ? *grad : Tensor(p->value.rows(), p->value.cols()));
        }
    }

    auto evaluate = [&]() {
        Graph g(false);
        LossProbe probe = loss_fn(g);
        if (probe.plans != reference_plans) {
            throw InstanceRejected("allocation changed under a finite-difference probe");
        }
        return probe.loss.value().item();
    };

    GradCheckReport report;
    for (std::size_t k = 0; k < params.size(); ++k) {
        Parameter& p = *params[k];
        if (!p.trainable) {
            continue;
        }
        GradCheckEntry entry;
        entry.name = p.name;
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double original = p.value[i];
            p.value[i] = original + options.epsilon;
            double plus = 0.0, minus = 0.0;
            try {
                plus = evaluate();
                p.value[i] = original - options.epsilon;
                minus = evaluate();
            } catch (...) {
                p.value[i] = original;
                throw;
            }
            p.value[i] = original;

            const double numeric = (plus - minus) / (2.0 * options.epsilon);
            const double exact = analytic[k][i] * options.analytic_scale;
            const double abs_err = std::abs(exact - numeric);
            const double denom = std::max({std::abs(exact), std::abs(numeric), options.relative_floor});
            const double rel_err = abs_err / denom;
            if (rel_err > entry.max_relative_error) {
                entry.max_relative_error = rel_err;
                entry.worst_index = i;
            }
            entry.max_absolute_error = std::max(entry.max_absolute_error, abs_err);
            ++entry.scalars;
        }
        report.scalars_checked += entry.scalars;
        report.max_relative_error = std::max(report.max_relative_error, entry.max_relative_error);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace evf
