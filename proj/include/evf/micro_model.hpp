// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/allocator.hpp"
#include "evf/evf_layer.hpp"
#include "evf/ffn.hpp"
#include "evf/graph.hpp"
#include "evf/rng.hpp"
#include "evf/training.hpp"

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

namespace evf {

struct ModelConfig {
    std::size_t depth = 4;
    std::size_t width = 32;
    std::size_t heads = 2;
    std::size_t hidden = 64;
    std::size_t vocab = 64;
    std::size_t image_feature_width = 8;
    std::size_t max_positions = 64;
    // Layers whose FFN becomes an EVF layer on entering stage 3.
    std::vector<std::size_t> evf_layer_indices = alternating_layers(4);
    CapacityConfig capacity;
    Strategy strategy = Strategy::img_gbpr;
    std::uint64_t seed = 0;

    // {0, 2, 4, ...} (or {1, 3, ...} when odd is set) below depth.
    static std::vector<std::size_t> alternating_layers(std::size_t depth, bool odd = false);

    // Throws ConfigError naming the offending field.
    void validate() const;
};

struct AttentionParams {
    Parameter query;
    Parameter key;
    Parameter value;
    Parameter output;
};

struct Block {
    AttentionParams attention;
    std::variant<FfnParams, EvfLayerParams> ffn;

    bool is_evf() const noexcept { return std::holds_alternative<EvfLayerParams>(ffn); }
};

// Linear projection of synthetic image features into the model width.
struct VisionAdapter {
    Parameter weight;  // image_feature_width x d
    Parameter bias;    // 1 x d
};

struct GroupedParameter {
    ParamGroup group;
    Parameter* param;
};

struct ConstGroupedParameter {
    ParamGroup group;
    const Parameter* param;
};

// Decoder-only transformer with pre-norm residual blocks, causal multi-head
// attention and a linear vision adapter for image tokens.
class MicroModel {
public:
    // Deterministic initialisation from cfg.seed. Every block starts with a dense FFN.
    static MicroModel build(const ModelConfig& cfg);

    const ModelConfig& config() const noexcept { return cfg_; }
    int stage() const noexcept { return stage_; }

    // Replaces the dense FFN of every configured layer by an EVF layer that
    // duplicates it, then applies the stage-3 schedule.
    void enter_stage3();
    bool has_evf_layers() const noexcept;

    // Sets trainability flags and records schedule.stage as the model's stage.
    void apply_schedule(const StageSchedule& schedule);

    std::vector<GroupedParameter> grouped_parameters();
    std::vector<ConstGroupedParameter> grouped_parameters() const;
    std::vector<Parameter*> parameters();
    std::vector<Parameter*> trainable_parameters();
    void zero_grad();

    Parameter token_embedding;     // vocab x d
    Parameter position_embedding;  // max_positions x d
    VisionAdapter adapter;
    std::vector<Block> blocks;
    Parameter head;  // d x vocab

private:
    ModelConfig cfg_;
    int stage_ = 1;
};

// A batch of sequences; each sequence is its image tokens followed by its text tokens.
struct TokenBatch {
    std::vector<std::vector<std::size_t>> text;
    // One [image_tokens x feature_width] tensor per sequence; zero rows for text-only.
    std::vector<Tensor> images;

    std::size_t sequences() const noexcept { return text.size(); }
    std::size_t image_tokens(std::size_t s) const;
    std::size_t sequence_length(std::size_t s) const { return image_tokens(s) + text[s].size(); }
    std::size_t total_tokens() const;
    bool has_images() const;

    // Flattened modality labels; groups hold the sequence index.
    ModalityTags tags() const;

    // Rows of the flattened batch that predict the next text token, and those tokens.
    std::vector<std::size_t> prediction_rows() const;
    std::vector<std::size_t> prediction_targets() const;
};

enum class ForwardMode { multimodal, language_only };

struct EvfLayerTrace {
    std::size_t layer = 0;
    Var probabilities;
    RoutingDecision decision;
    AllocationPlan plan;
    LayerTelemetry telemetry;
};

struct ModelForward {
    Var logits;  // total_tokens x vocab
    std::vector<EvfLayerTrace> evf_layers;
};

// Each EVF layer allocates with seed mix_seed(allocation_seed, layer index).
ModelForward forward(Graph& g, const MicroModel& model, const TokenBatch& batch, ForwardMode mode,
                     std::uint64_t allocation_seed = 0);
Tensor forward_logits(const MicroModel& model, const TokenBatch& batch, ForwardMode mode,
                      std::uint64_t allocation_seed = 0);

struct ModelLoss {
    Var total;
    LossBreakdown breakdown;
    std::vector<EvfLayerTrace> evf_layers;
};

// L_total = cross-entropy over next-text-token predictions + alpha * mean EVF balancing loss.
ModelLoss model_loss(Graph& g, const MicroModel& model, const TokenBatch& batch, double alpha,
                     std::uint64_t allocation_seed);

struct SyntheticTaskConfig {
    std::size_t keys = 4;
    std::size_t batch = 4;
    std::size_t image_tokens = 4;
    std::size_t text_tokens = 12;
    double feature_noise = 0.1;
    std::uint64_t task_seed = 1234;
};

// Multimodal next-token task. Each sequence carries a key in its image
// features; the text is a walk t[i+1] = perm_key(t[i]) through the vocabulary,
// so the first transition cannot be predicted from text alone.
class SyntheticTask {
public:
    SyntheticTask(const SyntheticTaskConfig& cfg, std::size_t vocab, std::size_t feature_width);

    const SyntheticTaskConfig& config() const noexcept { return cfg_; }
    std::size_t permute(std::size_t key, std::size_t token) const { return perms_[key][token]; }

    TokenBatch sample(Rng& rng) const;
    // Uniform random text with no images.
    TokenBatch sample_text_only(Rng& rng, std::size_t sequences, std::size_t length) const;

private:
    SyntheticTaskConfig cfg_;
    std::size_t vocab_;
    std::size_t feature_width_;
    std::vector<std::vector<std::size_t>> perms_;
};

}  // namespace evf
