// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/errors.hpp"
#include "evf/evf_layer.hpp"
#include "evf/training.hpp"

#include "oracle/finite_difference.hpp"
#include "oracle/generators.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numbers>

using namespace evf;

namespace {

AllocationPlan plan_for(const RoutingDecision& d, const ModalityTags& tags, Strategy s, double factor = 1.5) {
    CapacityConfig cfg;
    cfg.capacity_factor = factor;
    return dispatch(d, tags, cfg, s);
}

// F and G recounted from plan assignment and probabilities, token by token.
double recount_aux(const AllocationPlan& plan, const RoutingDecision& d) {
    double fi = 0, ft = 0, gi = 0, gt = 0;
    const auto n = static_cast<double>(plan.num_tokens);
    for (std::size_t t = 0; t < plan.num_tokens; ++t) {
        if (plan.assignment[t] == 1) fi += 1;
        if (plan.assignment[t] == 0) ft += 1;
        gi += d.probabilities(t, 1);
        gt += d.probabilities(t, 0);
    }
    return (fi / n) * (gi / n) + (ft / n) * (gt / n);
}

}  // namespace

TEST(AuxLoss, BalancedIsHalf) {
    const RoutingDecision d = testgen::decision_from_logits(Tensor(4, 2));
    AllocationPlan plan = plan_for(d, ModalityTags::image_then_text(2, 2), Strategy::img_gbpr);
    ASSERT_EQ(plan.load(Ffn::vision), 2u);
    std::vector<LayerLoad> loads;
    const std::vector<AllocationPlan> plans{plan};
    const std::vector<RoutingDecision> ds{d};
    EXPECT_NEAR(aux_loss(plans, ds, &loads), 0.5, 1e-15);
    EXPECT_EQ(loads[0].f_image, 0.5);
    EXPECT_EQ(loads[0].g_text, 0.5);
}

TEST(AuxLoss, AllVisionGivesG) {
    Tensor z(6, 2);
    for (std::size_t t = 0; t < 6; ++t) z(t, 1) = 0.3 * static_cast<double>(t);
    z(0, 1) = 0.01;
    const RoutingDecision d = testgen::decision_from_logits(z);
    const AllocationPlan plan = plan_for(d, ModalityTags::image_then_text(6, 0), Strategy::gbpr, 2.0);
    ASSERT_EQ(plan.load(Ffn::vision), 6u);
    double g = 0;
    for (std::size_t t = 0; t < 6; ++t) g += d.probabilities(t, 1) / 6.0;
    const std::vector<AllocationPlan> plans{plan};
    const std::vector<RoutingDecision> ds{d};
    EXPECT_NEAR(aux_loss(plans, ds), g, 1e-15);
}

TEST(AuxLoss, MatchesRecountAndAveragesLayers) {
    Rng rng(21);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<AllocationPlan> plans;
        std::vector<RoutingDecision> ds;
        double expected = 0;
        const std::size_t layers = 1 + rng.uniform_index(4);
        for (std::size_t l = 0; l < layers; ++l) {
            const auto inst = testgen::random_instance(rng, 1 + rng.uniform_index(64));
            plans.push_back(plan_for(inst.decision, inst.tags, static_cast<Strategy>(rng.uniform_index(3)),
                                     0.25 * static_cast<double>(1 + rng.uniform_index(8))));
            ds.push_back(inst.decision);
            expected += recount_aux(plans.back(), ds.back());
        }
        std::vector<LayerLoad> loads;
        EXPECT_NEAR(aux_loss(plans, ds, &loads), expected / static_cast<double>(layers), 1e-12);
        for (const LayerLoad& l : loads) {
            EXPECT_NEAR(l.g_image + l.g_text, 1.0, 1e-12);
            EXPECT_LE(l.f_image + l.f_text, 1.0 + 1e-12);
        }
    }
}

TEST(AuxLoss, EmptyPlanListIsContractError) {
    EXPECT_THROW(aux_loss(std::span<const AllocationPlan>{}, std::span<const RoutingDecision>{}), ContractError);
}

TEST(AuxLoss, GraphVersionAgreesAndDifferentiatesThroughG) {
    Rng rng(22);
    Parameter z("z", fd::random_tensor(rng, 10, 2));
    const ModalityTags tags = ModalityTags::image_then_text(4, 6);
    const AllocationPlan plan = plan_for(testgen::decision_from_logits(z.value), tags, Strategy::gbpr, 1.0);
    const std::vector<AllocationPlan> plans{plan};
    Graph g;
    const Var p[] = {ops::softmax_rows(g.param(z))};
    const AuxLossVar aux = aux_loss(g, plans, p);
    const std::vector<RoutingDecision> ds{testgen::decision_from_logits(z.value)};
    EXPECT_NEAR(aux.value.value().item(), aux_loss(plans, ds), 1e-15);
    // With F held fixed the loss is linear in the mean probabilities.
    const double err = fd::max_relative_error({&z}, [&](Graph& h) {
        const Var q[] = {ops::softmax_rows(h.param(z))};
        return aux_loss(h, plans, q).value;
    });
    EXPECT_LT(err, 1e-4);
}

TEST(AuxLoss, SweepIsMinimisedAtBalance) {
    // Two tokens; a single logit shift s moves both towards vision. With
    // factor 2 both are always accepted. While one token prefers each FFN the
    // loss is exactly 0.5; once both prefer the same FFN it rises above 0.5.
    double best = std::numeric_limits<double>::infinity();
    for (int k = -400; k <= 400; ++k) {
        const double s = 0.01 * k + 0.005;
        Tensor z(2, 2);
        z(0, 1) = 2.0 + s;
        z(1, 1) = -2.0 + s;
        const RoutingDecision d = testgen::decision_from_logits(z);
        const AllocationPlan plan = plan_for(d, ModalityTags::image_then_text(1, 1), Strategy::gbpr, 2.0);
        const std::vector<AllocationPlan> plans{plan};
        const std::vector<RoutingDecision> ds{d};
        std::vector<LayerLoad> loads;
        const double v = aux_loss(plans, ds, &loads);
        ASSERT_NEAR(loads[0].f_image + loads[0].f_text, 1.0, 1e-15);
        const bool balanced = std::abs(s) < 2.0;
        if (balanced) {
            EXPECT_NEAR(v, 0.5, 1e-12) << s;
        } else {
            EXPECT_GT(v, 0.5 + 1e-6) << s;
        }
        best = std::min(best, v);
    }
    EXPECT_NEAR(best, 0.5, 1e-12);
}

TEST(TotalLoss, Examples) {
    EXPECT_NEAR(total_loss(2.0, 0.5, 0.001).total, 2.0005, 1e-15);
    EXPECT_EQ(total_loss(3.25, 0.0, 0.001).total, 3.25);
    EXPECT_EQ(total_loss(3.25, 123.0, 0.0).total, 3.25);
    EXPECT_THROW(total_loss(std::nan(""), 0.5, 0.001), NumericError);
    EXPECT_THROW(total_loss(1.0, std::numeric_limits<double>::infinity(), 0.001), NumericError);
    EXPECT_EQ(kDefaultAuxAlpha, 0.001);
}

TEST(TotalLoss, RecomposesExactly) {
    Rng rng(23);
    for (int trial = 0; trial < 1000; ++trial) {
        const double r = 10 * rng.uniform01(), a = rng.uniform01(), alpha = rng.uniform01();
        const LossBreakdown b = total_loss(r, a, alpha);
        EXPECT_NEAR(b.total - b.regressive - b.alpha * b.aux, 0.0, 1e-12);
    }
}

TEST(RegressiveLoss, Examples) {
    EXPECT_NEAR(regressive_loss(Tensor(3, 4), std::vector<std::size_t>{0, 1, 3}), std::log(4.0), 1e-15);
    Tensor sharp(1, 5);
    sharp(0, 2) = 1000.0;
    EXPECT_LT(regressive_loss(sharp, std::vector<std::size_t>{2}), 1e-300);
    EXPECT_THROW(regressive_loss(Tensor(1, 3), std::vector<std::size_t>{3}), ContractError);
}

TEST(RegressiveLoss, MatchesLogSumExpOracle) {
    Rng rng(24);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t rows = 1 + rng.uniform_index(10), v = 2 + rng.uniform_index(20);
        const Tensor logits = fd::random_tensor(rng, rows, v, 3.0);
        std::vector<std::size_t> targets;
        for (std::size_t r = 0; r < rows; ++r) targets.push_back(rng.uniform_index(v));
        long double total = 0;
        for (std::size_t r = 0; r < rows; ++r) {
            long double m = logits(r, 0);
            for (std::size_t c = 1; c < v; ++c) m = std::max<long double>(m, logits(r, c));
            long double s = 0;
            for (std::size_t c = 0; c < v; ++c) s += std::exp(static_cast<long double>(logits(r, c)) - m);
            total += m + std::log(s) - logits(r, targets[r]);
        }
        EXPECT_NEAR(regressive_loss(logits, targets), static_cast<double>(total / rows), 1e-10);
    }
}

TEST(Schedule, WarmupThenCosine) {
    OptimizerConfig cfg;
    cfg.total_steps = 1000;
    EXPECT_EQ(learning_rate_at(cfg, 0), 0.0);
    EXPECT_NEAR(learning_rate_at(cfg, 15), 0.5e-3, 1e-18);
    EXPECT_NEAR(learning_rate_at(cfg, 30), 1e-3, 1e-18);
    EXPECT_NEAR(learning_rate_at(cfg, 515), 0.5e-3, 1e-15);
    EXPECT_NEAR(learning_rate_at(cfg, 1000), 0.0, 1e-18);
    double prev = learning_rate_at(cfg, 30);
    for (std::size_t s = 31; s <= 1000; ++s) {
        const double lr = learning_rate_at(cfg, s);
        EXPECT_LE(lr, prev);
        prev = lr;
    }
}

TEST(AdamW, MatchesHandSteppedRecurrence) {
    OptimizerConfig cfg;
    cfg.learning_rate = 0.01;
    cfg.total_steps = 50;
    cfg.weight_decay = 0.1;
    AdamW opt(cfg);
    Parameter p("w", Tensor::scalar(0.7));
    const std::vector<Parameter*> ps{&p};
    double w = 0.7, m = 0, v = 0;
    for (std::size_t k = 0; k < 50; ++k) {
        const double grad = std::sin(0.3 * static_cast<double>(k)) + 0.1;
        p.grad = Tensor::scalar(grad);
        const double lr = opt.step(ps, k);
        m = 0.9 * m + 0.1 * grad;
        v = 0.95 * v + 0.05 * grad * grad;
        const double mh = m / (1 - std::pow(0.9, k + 1.0));
        const double vh = v / (1 - std::pow(0.95, k + 1.0));
        const auto warm = static_cast<double>(std::ceil(0.03 * 50));
        const double expected_lr = k < warm ? 0.01 * static_cast<double>(k) / warm
                                            : 0.5 * 0.01 * (1 + std::cos(std::numbers::pi * (k - warm) / (50 - warm)));
        ASSERT_NEAR(lr, expected_lr, 1e-15);
        w -= expected_lr * (mh / (std::sqrt(vh) + 1e-8) + 0.1 * w);
        ASSERT_NEAR(p.value.item(), w, 1e-12) << "step " << k;
    }
}

TEST(AdamW, FrozenUnchangedOverThousandSteps) {
    OptimizerConfig cfg;
    cfg.total_steps = 1000;
    AdamW opt(cfg);
    Parameter frozen("frozen", Tensor::from_rows({{0.25, -1.5}}), false);
    Parameter live("live", Tensor::from_rows({{0.25, -1.5}}));
    const Tensor before = frozen.value;
    const std::vector<Parameter*> ps{&frozen, &live};
    for (std::size_t k = 0; k < 1000; ++k) {
        frozen.grad.fill(1.0);
        live.grad.fill(1.0);
        opt.step(ps, k);
    }
    EXPECT_TRUE(frozen.value.bit_equal(before));
    EXPECT_LT(live.value(0, 0), 0.25);
}

TEST(StageSchedule, Masks) {
    const auto s1 = StageSchedule::for_stage(1), s2 = StageSchedule::for_stage(2), s3 = StageSchedule::for_stage(3);
    for (ParamGroup g : {ParamGroup::embedding, ParamGroup::attention, ParamGroup::dense_ffn, ParamGroup::language_ffn,
                         ParamGroup::vision_ffn, ParamGroup::router, ParamGroup::adapter, ParamGroup::head}) {
        EXPECT_EQ(s1.trains(g), g == ParamGroup::adapter) << to_string(g);
        EXPECT_EQ(s2.trains(g), g != ParamGroup::vision_ffn && g != ParamGroup::router) << to_string(g);
        EXPECT_EQ(s3.trains(g), g == ParamGroup::vision_ffn || g == ParamGroup::router) << to_string(g);
    }
    StageSchedule swapped = StageSchedule::for_stage(3);
    swapped.overrides[ParamGroup::language_ffn] = true;
    swapped.overrides[ParamGroup::vision_ffn] = false;
    EXPECT_TRUE(swapped.trains(ParamGroup::language_ffn));
    EXPECT_FALSE(swapped.trains(ParamGroup::vision_ffn));
    EXPECT_THROW(StageSchedule::for_stage(4), ConfigError);
}

namespace {

struct ToyLayer {
    EvfLayerParams layer;
    Tensor x;
    ModalityTags tags;
    Tensor head;
    std::vector<std::size_t> targets;

    explicit ToyLayer(std::uint64_t seed) {
        Rng rng(seed);
        FfnParams dense = FfnParams::random("l0.ffn", 4, 6, rng);
        layer = init_stage3_from_dense(dense, "l0");
        for (double& v : layer.router.weight.value.data()) v = rng.normal();
        for (double& v : layer.vision_ffn.up_weight.value.data()) v += 0.1 * rng.normal();
        x = fd::random_tensor(rng, 6, 4);
        tags = ModalityTags::image_then_text(2, 4);
        head = fd::random_tensor(rng, 4, 5);
        for (int i = 0; i < 6; ++i) targets.push_back(rng.uniform_index(5));
    }

    LossFunction loss(double alpha) {
        return [this, alpha](Graph& g) {
            EvfForward f = forward_multimodal(g, layer, g.constant(x), tags, 0);
            Var logits = ops::matmul(ops::add(g.constant(x), f.output), g.constant(head));
            const Var probs[] = {f.probabilities};
            std::vector<AllocationPlan> plans{f.plan};
            Var aux = aux_loss(g, plans, probs).value;
            Var total = ops::add(ops::cross_entropy(logits, targets), ops::scale(aux, alpha));
            return LossProbe{total, plans};
        };
    }
};

}  // namespace

TEST(GradCheck, ToyLayerPasses) {
    ToyLayer toy(31);
    const std::vector<Parameter*> params = toy.layer.parameters();
    const GradCheckReport report = grad_check(params, toy.loss(kDefaultAuxAlpha));
    EXPECT_TRUE(report.passed(1e-4)) << report.max_relative_error;
    // Only the router and the vision FFN are trainable.
    EXPECT_EQ(report.entries.size(), 5u);
    for (const auto& e : report.entries) EXPECT_EQ(e.name.find("language_ffn"), std::string::npos);
    EXPECT_EQ(report.scalars_checked, 4u * 2 + 4 * 6 + 6 + 6 * 4 + 4);
}

TEST(GradCheck, CorruptedGradientFails) {
    ToyLayer toy(32);
    const std::vector<Parameter*> params = toy.layer.parameters();
    GradCheckOptions opts;
    opts.analytic_scale = 1.01;
    EXPECT_FALSE(grad_check(params, toy.loss(kDefaultAuxAlpha), opts).passed(1e-4));
}

TEST(GradCheck, RouterGetsGateGradientWithoutAux) {
    ToyLayer toy(33);
    const std::vector<Parameter*> params{&toy.layer.router.weight};
    const GradCheckReport report = grad_check(params, toy.loss(0.0));
    EXPECT_TRUE(report.passed(1e-4));
    Graph g;
    LossProbe probe = toy.loss(0.0)(g);
    g.backward(probe.loss);
    const Tensor* grad = g.grad_of(toy.layer.router.weight);
    ASSERT_NE(grad, nullptr);
    double norm = 0;
    for (double v : grad->data()) norm += std::abs(v);
    EXPECT_GT(norm, 0.0);
}

TEST(GradCheck, RejectsUnstableInstances) {
    // Two tokens both prefer vision with capacity for one; their scores differ
    // by 1e-9, far less than a probe of the router moves them.
    Rng rng(34);
    EvfLayerParams layer = init_stage3_from_dense(FfnParams::random("l0.ffn", 3, 4, rng), "l0",
                                                  CapacityConfig{}, Strategy::gbpr);
    layer.capacity.capacity_factor = 1.0;
    layer.router.weight.value = Tensor::from_rows({{0.0, 1.0}, {0.0, 1.0 + 1e-9}, {0.0, 0.0}});
    const Tensor x = Tensor::from_rows({{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}});
    const ModalityTags tags = ModalityTags::image_then_text(0, 2);
    const std::vector<Parameter*> params{&layer.router.weight};
    const Tensor before = layer.router.weight.value;
    auto loss = [&](Graph& g) {
        EvfForward f = forward_multimodal(g, layer, g.constant(x), tags, 0);
        return LossProbe{ops::sum(f.output), {f.plan}};
    };
    EXPECT_THROW(grad_check(params, loss), InstanceRejected);
    EXPECT_TRUE(layer.router.weight.value.bit_equal(before));
}

TEST(GradCheck, FrozenParametersSkipped) {
    ToyLayer toy(35);
    std::vector<Parameter*> params = toy.layer.parameters();
    for (Parameter* p : params) p->trainable = false;
    const GradCheckReport report = grad_check(params, toy.loss(kDefaultAuxAlpha));
    EXPECT_TRUE(report.entries.empty());
    EXPECT_EQ(report.scalars_checked, 0u);
}
