// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/errors.hpp"
#include "evf/evf_layer.hpp"

#include "oracle/allocation_oracle.hpp"
#include "oracle/finite_difference.hpp"
#include "oracle/generators.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

using namespace evf;

namespace {

constexpr std::size_t kWidth = 6;
constexpr std::size_t kHidden = 10;

FfnParams dense_ffn(Rng& rng) {
    FfnParams p = FfnParams::random("layers.0.ffn", kWidth, kHidden, rng);
    for (double& v : p.up_bias.value.data()) v = 0.1 * rng.normal();
    for (double& v : p.down_bias.value.data()) v = 0.1 * rng.normal();
    return p;
}

// A layer as it might look after some stage-3 training.
EvfLayerParams trained_layer(Rng& rng, Strategy strategy = Strategy::img_gbpr) {
    EvfLayerParams layer = init_stage3_from_dense(dense_ffn(rng), "layers.0", CapacityConfig{}, strategy);
    for (double& v : layer.router.weight.value.data()) v = rng.normal();
    for (Parameter* p : layer.vision_ffn.parameters()) {
        for (double& v : p->value.data()) v += 0.2 * rng.normal();
    }
    return layer;
}

ModalityTags mixed_tags(std::size_t images, std::size_t texts) { return ModalityTags::image_then_text(images, texts); }

// Scalar-loop FFN on a single row.
std::vector<double> ffn_row(const FfnParams& p, std::span<const double> x) {
    std::vector<double> h(p.hidden()), out(p.width());
    for (std::size_t j = 0; j < p.hidden(); ++j) {
        double a = p.up_bias.value(0, j);
        for (std::size_t i = 0; i < p.width(); ++i) a += x[i] * p.up_weight.value(i, j);
        h[j] = 0.5 * a * (1.0 + std::tanh(0.7978845608028654 * (a + 0.044715 * a * a * a)));
    }
    for (std::size_t i = 0; i < p.width(); ++i) {
        double o = p.down_bias.value(0, i);
        for (std::size_t j = 0; j < p.hidden(); ++j) o += h[j] * p.down_weight.value(j, i);
        out[i] = o;
    }
    return out;
}

}  // namespace

TEST(Init, DuplicatesDenseBitExactly) {
    Rng rng(1);
    const FfnParams dense = dense_ffn(rng);
    const EvfLayerParams layer = init_stage3_from_dense(dense, "layers.0");
    EXPECT_TRUE(layer.language_ffn.same_values(dense));
    EXPECT_TRUE(layer.vision_ffn.same_values(dense));
    EXPECT_FALSE(layer.language_ffn.trainable());
    EXPECT_TRUE(layer.vision_ffn.trainable());
    EXPECT_TRUE(layer.router.weight.trainable);
    EXPECT_EQ(layer.vision_ffn.up_weight.name, "layers.0.vision_ffn.up.weight");
    EXPECT_EQ(layer.language_ffn.down_bias.name, "layers.0.language_ffn.down.bias");
    for (double v : layer.router.weight.value.data()) EXPECT_EQ(v, 0.0);
}

TEST(Init, FirstForwardRoutesAtHalf) {
    Rng rng(2);
    const EvfLayerParams layer = init_stage3_from_dense(dense_ffn(rng), "layers.0");
    const EvfOutput out = forward_multimodal(layer, fd::random_tensor(rng, 8, kWidth), mixed_tags(3, 5), 0);
    for (double p : out.decision.probabilities.data()) EXPECT_EQ(p, 0.5);
}

TEST(Forward, FreshLayerIsHalfTheDenseOutput) {
    Rng rng(3);
    const FfnParams dense = dense_ffn(rng);
    const Tensor x = fd::random_tensor(rng, 12, kWidth);
    const Tensor expected = kernels::scale(ffn_forward(dense, x), 0.5);
    for (Strategy s : {Strategy::random, Strategy::gbpr, Strategy::img_gbpr}) {
        const EvfLayerParams layer = init_stage3_from_dense(dense, "layers.0", CapacityConfig{}, s);
        // Zero router ties every token to language; at factor 2 nobody is dropped.
        EvfLayerParams roomy = layer;
        roomy.capacity.capacity_factor = 2.0;
        const EvfOutput out = forward_multimodal(roomy, x, mixed_tags(4, 8), 5);
        ASSERT_TRUE(out.plan.dropped.empty());
        for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out.output[i], expected[i], 1e-12);
    }
    // Img-GBPR at the default factor never drops, so the identity holds there too.
    const EvfOutput out = forward_multimodal(init_stage3_from_dense(dense, "l"), x, mixed_tags(4, 8), 5);
    ASSERT_TRUE(out.plan.dropped.empty());
    EXPECT_TRUE(out.output.bit_equal(expected));
}

TEST(Forward, DroppedTokenRowIsZero) {
    Rng rng(4);
    EvfLayerParams layer = trained_layer(rng, Strategy::gbpr);
    layer.capacity.capacity_factor = 0.5;
    const Tensor x = fd::random_tensor(rng, 16, kWidth);
    const EvfOutput out = forward_multimodal(layer, x, mixed_tags(6, 10), 9);
    ASSERT_FALSE(out.plan.dropped.empty());
    for (std::size_t t : out.plan.dropped) {
        for (double v : out.output.row(t)) EXPECT_EQ(v, 0.0);
    }
    for (std::size_t e = 0; e < kNumFfns; ++e) {
        for (std::size_t t : out.plan.accepted[e]) {
            double norm = 0.0;
            for (double v : out.output.row(t)) norm += std::abs(v);
            EXPECT_GT(norm, 0.0);
        }
    }
}

TEST(Forward, MatchesTokenByTokenOracle) {
    Rng rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const Strategy s = static_cast<Strategy>(trial % 3);
        EvfLayerParams layer = trained_layer(rng, s);
        layer.capacity.capacity_factor = 0.25 * static_cast<double>(2 + rng.uniform_index(5));
        layer.capacity.redistribution_fraction = 0.5;
        const std::size_t n = 4 + rng.uniform_index(20);
        const Tensor x = fd::random_tensor(rng, n, kWidth);
        ModalityTags tags;
        for (std::size_t t = 0; t < n; ++t) {
            tags.labels.push_back(rng.uniform01() < 0.4 ? Modality::image : Modality::text);
            tags.groups.push_back(static_cast<std::uint32_t>(2 * t / n));
        }
        const std::uint64_t seed = rng.next_u64();
        const EvfOutput out = forward_multimodal(layer, x, tags, seed);

        // Route each token by hand.
        oracle::Instance inst;
        for (std::size_t t = 0; t < n; ++t) {
            double zl = 0.0, zv = 0.0;
            for (std::size_t i = 0; i < kWidth; ++i) {
                zl += x(t, i) * layer.router.weight.value(i, 0);
                zv += x(t, i) * layer.router.weight.value(i, 1);
            }
            const double m = std::max(zl, zv);
            const double el = std::exp(zl - m), ev = std::exp(zv - m);
            inst.z_language.push_back(zl);
            inst.z_vision.push_back(zv);
            inst.p_language.push_back(el / (el + ev));
            inst.p_vision.push_back(ev / (el + ev));
            inst.is_image.push_back(tags.labels[t] == Modality::image);
            inst.sequence.push_back(tags.groups[t]);
        }
        inst.factor_num = static_cast<std::size_t>(std::lround(layer.capacity.capacity_factor * 4));
        inst.factor_den = 4;
        inst.w_r = 0.5;
        inst.seed = seed;
        const oracle::Plan ref = oracle::allocate(inst, testgen::to_oracle(s));

        for (std::size_t t = 0; t < n; ++t) {
            ASSERT_EQ(out.plan.assignment[t], ref.where[t]) << "trial " << trial << " token " << t;
            if (ref.where[t] < 0) {
                for (double v : out.output.row(t)) EXPECT_EQ(v, 0.0);
                continue;
            }
            const FfnParams& ffn = ref.where[t] == 0 ? layer.language_ffn : layer.vision_ffn;
            const double gate = ref.where[t] == 0 ? inst.p_language[t] : inst.p_vision[t];
            const std::vector<double> y = ffn_row(ffn, x.row(t));
            for (std::size_t i = 0; i < kWidth; ++i) EXPECT_NEAR(out.output(t, i), gate * y[i], 1e-10);
        }
    }
}

TEST(Forward, TagMismatchIsContractError) {
    Rng rng(6);
    const EvfLayerParams layer = trained_layer(rng);
    EXPECT_THROW(forward_multimodal(layer, Tensor(4, kWidth), mixed_tags(1, 2), 0), ContractError);
    EXPECT_THROW(forward_multimodal(layer, Tensor(3, kWidth + 1), mixed_tags(1, 2), 0), DimensionError);
}

TEST(LanguageOnly, FreshLayerEqualsDenseBitExactly) {
    Rng rng(7);
    const FfnParams dense = dense_ffn(rng);
    const EvfLayerParams layer = init_stage3_from_dense(dense, "layers.0");
    const Tensor x = fd::random_tensor(rng, 9, kWidth);
    EXPECT_TRUE(forward_language_only(layer, x).bit_equal(ffn_forward(dense, x)));
}

TEST(LanguageOnly, UnaffectedByRouterAndVisionChanges) {
    Rng rng(8);
    const FfnParams dense = dense_ffn(rng);
    const EvfLayerParams fresh = init_stage3_from_dense(dense, "layers.0");
    EvfLayerParams moved = fresh;
    for (double& v : moved.router.weight.value.data()) v = rng.normal();
    for (Parameter* p : moved.vision_ffn.parameters()) {
        for (double& v : p->value.data()) v = rng.normal();
    }
    const Tensor x = fd::random_tensor(rng, 9, kWidth);
    EXPECT_TRUE(forward_language_only(moved, x).bit_equal(ffn_forward(dense, x)));
}

TEST(LanguageOnly, ZeroInputGivesBiasPath) {
    Rng rng(9);
    const FfnParams dense = dense_ffn(rng);
    const EvfLayerParams layer = init_stage3_from_dense(dense, "layers.0");
    const Tensor out = forward_language_only(layer, Tensor(2, kWidth));
    const std::vector<double> zero(kWidth, 0.0);
    const std::vector<double> ref = ffn_row(dense, zero);
    for (std::size_t t = 0; t < 2; ++t) {
        for (std::size_t i = 0; i < kWidth; ++i) EXPECT_NEAR(out(t, i), ref[i], 1e-15);
    }
    EXPECT_THROW(forward_language_only(layer, Tensor(2, kWidth + 1)), ContractError);
}

TEST(Gradients, FlowToRouterAndVisionOnly) {
    Rng rng(10);
    EvfLayerParams layer = trained_layer(rng);
    const Tensor x = fd::random_tensor(rng, 10, kWidth);
    const Tensor w = fd::random_tensor(rng, 10, kWidth);
    Graph g;
    EvfForward f = forward_multimodal(g, layer, g.constant(x), mixed_tags(4, 6), 3);
    g.backward(fd::weighted_sum(g, f.output, w));
    for (const Parameter* p : layer.language_ffn.parameters()) EXPECT_EQ(g.grad_of(*p), nullptr);
    auto nonzero = [&](const Parameter& p) {
        const Tensor* grad = g.grad_of(p);
        if (grad == nullptr) return false;
        for (double v : grad->data()) {
            if (v != 0.0) return true;
        }
        return false;
    };
    EXPECT_TRUE(nonzero(layer.router.weight));
    EXPECT_TRUE(nonzero(layer.vision_ffn.up_weight));
    std::vector<Parameter*> params = layer.parameters();
    for (Parameter* p : params) p->zero_grad();
    g.accumulate_into(params);
    for (const Parameter* p : layer.language_ffn.parameters()) {
        for (double v : p->grad.data()) EXPECT_EQ(v, 0.0);
    }
}

TEST(Gradients, GateMatchesFiniteDifferences) {
    Rng rng(11);
    int checked = 0;
    for (int trial = 0; trial < 40 && checked < 10; ++trial) {
        EvfLayerParams layer = trained_layer(rng);
        const Tensor x = fd::random_tensor(rng, 8, kWidth);
        const Tensor w = fd::random_tensor(rng, 8, kWidth);
        const ModalityTags tags = mixed_tags(3, 5);
        const AllocationPlan reference = forward_multimodal(layer, x, tags, 1).plan;
        // Skip instances where a nudge of the router could flip the allocation.
        bool stable = true;
        for (double delta : {-1e-4, 1e-4}) {
            for (std::size_t i = 0; i < layer.router.weight.value.size() && stable; ++i) {
                EvfLayerParams nudged = layer;
                nudged.router.weight.value[i] += delta;
                stable = forward_multimodal(nudged, x, tags, 1).plan == reference;
            }
        }
        if (!stable) continue;
        ++checked;
        const double err = fd::max_relative_error({&layer.router.weight, &layer.vision_ffn.up_weight}, [&](Graph& g) {
            return fd::weighted_sum(g, forward_multimodal(g, layer, g.constant(x), tags, 1).output, w);
        });
        EXPECT_LT(err, 1e-4);
    }
    EXPECT_GE(checked, 5);
}

TEST(Forward, PermutationRoundTrip) {
    Rng rng(12);
    for (int trial = 0; trial < 20; ++trial) {
        EvfLayerParams layer = trained_layer(rng, Strategy::gbpr);
        layer.capacity.capacity_factor = 0.75;
        const std::size_t n = 12;
        const Tensor x = fd::random_tensor(rng, n, kWidth);
        const ModalityTags tags = mixed_tags(5, 7);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
        Tensor px(n, kWidth);
        ModalityTags ptags;
        for (std::size_t i = 0; i < n; ++i) {
            std::copy(x.row(perm[i]).begin(), x.row(perm[i]).end(), px.row(i).begin());
            ptags.labels.push_back(tags.labels[perm[i]]);
        }
        const Tensor a = forward_multimodal(layer, x, tags, 0).output;
        const Tensor b = forward_multimodal(layer, px, ptags, 0).output;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t c = 0; c < kWidth; ++c) EXPECT_EQ(b(i, c), a(perm[i], c));
        }
    }
}

TEST(Telemetry, RecordsStatsAndHistogram) {
    Rng rng(13);
    EvfLayerParams layer = trained_layer(rng, Strategy::gbpr);
    layer.capacity.capacity_factor = 0.5;
    const EvfOutput out = forward_multimodal(layer, fd::random_tensor(rng, 20, kWidth), mixed_tags(8, 12), 0, 2);
    EXPECT_EQ(out.telemetry.layer, 2u);
    EXPECT_EQ(out.telemetry.strategy, Strategy::gbpr);
    EXPECT_EQ(out.telemetry.stats.total, 20u);
    EXPECT_GE(out.telemetry.stats.success_rate, 0.0);
    EXPECT_LE(out.telemetry.stats.success_rate, 1.0);
    std::size_t binned = 0;
    for (std::size_t c : out.telemetry.vision_probability_histogram) binned += c;
    EXPECT_EQ(binned, 20u);
}
