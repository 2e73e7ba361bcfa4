// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/micro_model.hpp"

#include "evf/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace evf {

std::vector<std::size_t> ModelConfig::alternating_layers(std::size_t depth, bool odd) {
    std::vector<std::size_t> out;
    for (std::size_t l = odd ? 1 : 0; l < depth; l += 2) {
        out.push_back(l);
    }
    return out;
}

void ModelConfig::validate() const {
    if (depth == 0) throw ConfigError("depth", "must be positive");
    if (width == 0) throw ConfigError("width", "must be positive");
    if (heads == 0) throw ConfigError("heads", "must be positive");
    if (width % heads != 0) throw ConfigError("heads", "width must be divisible by heads");
    if (hidden == 0) throw ConfigError("hidden", "must be positive");
    if (vocab < 2) throw ConfigError("vocab", "needs at least two tokens");
    if (image_feature_width == 0) throw ConfigError("image_feature_width", "must be positive");
    if (max_positions == 0) throw ConfigError("max_positions", "must be positive");
    for (std::size_t idx : evf_layer_indices) {
        if (idx >= depth) {
            throw ConfigError("evf_layer_indices",
                              "layer " + std::to_string(idx) + " outside [0, " + std::to_string(depth) + ")");
        }
    }
    std::vector<std::size_t> sorted = evf_layer_indices;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw ConfigError("evf_layer_indices", "duplicate layer index");
    }
    try {
        capacity.validate();
    } catch (const ConfigError& e) {
        throw ConfigError("capacity." + e.field(), e.what());
    }
}

namespace {

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Tensor t(rows, cols);
    for (double& v : t.data()) {
        v = stddev * rng.normal();
    }
    return t;
}

std::string layer_prefix(std::size_t l) { return "layers." + std::to_string(l); }

}  // namespace

MicroModel MicroModel::build(const ModelConfig& cfg) {
    cfg.validate();
    MicroModel m;
    m.cfg_ = cfg;
    Rng rng(cfg.seed);
    const std::size_t d = cfg.width;
    const double attn_std = 1.0 / std::sqrt(static_cast<double>(d));

    m.token_embedding = Parameter("token_embedding", normal_tensor(cfg.vocab, d, 1.0, rng));
    m.position_embedding = Parameter("position_embedding", normal_tensor(cfg.max_positions, d, 0.1, rng));
    m.adapter.weight = Parameter(
        "adapter.weight",
        normal_tensor(cfg.image_feature_width, d, 1.0 / std::sqrt(static_cast<double>(cfg.image_feature_width)), rng));
    m.adapter.bias = Parameter("adapter.bias", Tensor(1, d));
    for (std::size_t l = 0; l < cfg.depth; ++l) {
        const std::string prefix = layer_prefix(l);
        Block b;
        b.attention.query = Parameter(prefix + ".attention.query", normal_tensor(d, d, attn_std, rng));
        b.attention.key = Parameter(prefix + ".attention.key", normal_tensor(d, d, attn_std, rng));
        b.attention.value = Parameter(prefix + ".attention.value", normal_tensor(d, d, attn_std, rng));
        b.attention.output = Parameter(prefix + ".attention.output", normal_tensor(d, d, attn_std, rng));
        b.ffn = FfnParams::random(prefix + ".ffn", d, cfg.hidden, rng);
        m.blocks.push_back(std::move(b));
    }
    m.head = Parameter("head", normal_tensor(d, cfg.vocab, attn_std, rng));
    m.apply_schedule(StageSchedule::for_stage(1));
    return m;
}

void MicroModel::enter_stage3() {
    if (has_evf_layers()) {
        throw ContractError("enter_stage3: model already has EVF layers");
    }
    for (std::size_t l : cfg_.evf_layer_indices) {
        const FfnParams dense = std::get<FfnParams>(blocks[l].ffn);
        blocks[l].ffn = init_stage3_from_dense(dense, layer_prefix(l), cfg_.capacity, cfg_.strategy);
    }
    apply_schedule(StageSchedule::for_stage(3));
}

bool MicroModel::has_evf_layers() const noexcept {
    return std::any_of(blocks.begin(), blocks.end(), [](const Block& b) { return b.is_evf(); });
}

void MicroModel::apply_schedule(const StageSchedule& schedule) {
    for (GroupedParameter gp : grouped_parameters()) {
        gp.param->trainable = schedule.trains(gp.group);
        gp.param->zero_grad();
    }
    stage_ = schedule.stage;
}

std::vector<GroupedParameter> MicroModel::grouped_parameters() {
    std::vector<GroupedParameter> out;
    out.push_back({ParamGroup::embedding, &token_embedding});
    out.push_back({ParamGroup::embedding, &position_embedding});
    out.push_back({ParamGroup::adapter, &adapter.weight});
    out.push_back({ParamGroup::adapter, &adapter.bias});
    for (Block& b : blocks) {
        for (Parameter* p : {&b.attention.query, &b.attention.key, &b.attention.value, &b.attention.output}) {
            out.push_back({ParamGroup::attention, p});
        }
        if (auto* dense = std::get_if<FfnParams>(&b.ffn)) {
            for (Parameter* p : dense->parameters()) out.push_back({ParamGroup::dense_ffn, p});
        } else {
            auto& evf = std::get<EvfLayerParams>(b.ffn);
            out.push_back({ParamGroup::router, &evf.router.weight});
            for (Parameter* p : evf.language_ffn.parameters()) out.push_back({ParamGroup::language_ffn, p});
            for (Parameter* p : evf.vision_ffn.parameters()) out.push_back({ParamGroup::vision_ffn, p});
        }
    }
    out.push_back({ParamGroup::head, &head});
    return out;
}

std::vector<ConstGroupedParameter> MicroModel::grouped_parameters() const {
    std::vector<ConstGroupedParameter> out;
    for (GroupedParameter gp : const_cast<MicroModel*>(this)->grouped_parameters()) {
        out.push_back({gp.group, gp.param});
    }
    return out;
}

std::vector<Parameter*> MicroModel::parameters() {
    std::vector<Parameter*> out;
    for (GroupedParameter gp : grouped_parameters()) out.push_back(gp.param);
    return out;
}

std::vector<Parameter*> MicroModel::trainable_parameters() {
    std::vector<Parameter*> out;
    for (Parameter* p : parameters()) {
        if (p->trainable) out.push_back(p);
    }
    return out;
}

void MicroModel::zero_grad() {
    for (Parameter* p : parameters()) p->zero_grad();
}

std::size_t TokenBatch::image_tokens(std::size_t s) const {
    return s < images.size() ? images[s].rows() : 0;
}

std::size_t TokenBatch::total_tokens() const {
    std::size_t n = 0;
    for (std::size_t s = 0; s < sequences(); ++s) n += sequence_length(s);
    return n;
}

bool TokenBatch::has_images() const {
    return std::any_of(images.begin(), images.end(), [](const Tensor& t) { return t.rows() > 0; });
}

ModalityTags TokenBatch::tags() const {
    ModalityTags tags;
    for (std::size_t s = 0; s < sequences(); ++s) {
        tags.labels.insert(tags.labels.end(), image_tokens(s), Modality::image);
        tags.labels.insert(tags.labels.end(), text[s].size(), Modality::text);
        tags.groups.insert(tags.groups.end(), sequence_length(s), static_cast<std::uint32_t>(s));
    }
    return tags;
}

std::vector<std::size_t> TokenBatch::prediction_rows() const {
    std::vector<std::size_t> rows;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < sequences(); ++s) {
        const std::size_t first_text = offset + image_tokens(s);
        for (std::size_t i = 0; i + 1 < text[s].size(); ++i) rows.push_back(first_text + i);
        offset += sequence_length(s);
    }
    return rows;
}

std::vector<std::size_t> TokenBatch::prediction_targets() const {
    std::vector<std::size_t> targets;
    for (const auto& seq : text) {
        for (std::size_t i = 1; i < seq.size(); ++i) targets.push_back(seq[i]);
    }
    return targets;
}

namespace {

void check_batch(const MicroModel& model, const TokenBatch& batch, ForwardMode mode) {
    const ModelConfig& cfg = model.config();
    if (batch.sequences() == 0) {
        throw EmptyBatchError("forward: batch has no sequences");
    }
    if (!batch.images.empty() && batch.images.size() != batch.sequences()) {
        throw ContractError("forward: image list must be empty or have one entry per sequence");
    }
    if (mode == ForwardMode::language_only && batch.has_images()) {
        throw ContractError("forward: image features supplied in language-only mode");
    }
    for (std::size_t s = 0; s < batch.sequences(); ++s) {
        const std::size_t len = batch.sequence_length(s);
        if (len == 0) throw ContractError("forward: empty sequence " + std::to_string(s));
        if (len > cfg.max_positions) {
            throw ContractError("forward: sequence " + std::to_string(s) + " longer than max_positions");
        }
        if (batch.image_tokens(s) > 0 && batch.images[s].cols() != cfg.image_feature_width) {
            throw DimensionError("forward: image features " + batch.images[s].shape_string() +
                                 " do not match feature width " + std::to_string(cfg.image_feature_width));
        }
        for (std::size_t t : batch.text[s]) {
            if (t >= cfg.vocab) throw ContractError("forward: token id " + std::to_string(t) + " outside vocabulary");
        }
    }
}

Var attention(Graph& g, const AttentionParams& p, Var x, std::size_t heads) {
    const std::size_t d = x.value().cols();
    const std::size_t head_width = d / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_width));
    Var q = ops::matmul(x, g.param(p.query));
    Var k = ops::matmul(x, g.param(p.key));
    Var v = ops::matmul(x, g.param(p.value));
    std::vector<Var> outs;
    for (std::size_t h = 0; h < heads; ++h) {
        Var qh = ops::slice_cols(q, h * head_width, head_width);
        Var kh = ops::slice_cols(k, h * head_width, head_width);
        Var vh = ops::slice_cols(v, h * head_width, head_width);
        Var scores = ops::scale(ops::matmul(qh, ops::transpose(kh)), inv_sqrt);
        outs.push_back(ops::matmul(ops::causal_softmax_rows(scores), vh));
    }
    return ops::matmul(heads == 1 ? outs.front() : ops::concat_cols(outs), g.param(p.output));
}

}  // namespace

ModelForward forward(Graph& g, const MicroModel& model, const TokenBatch& batch, ForwardMode mode,
                     std::uint64_t allocation_seed) {
    check_batch(model, batch, mode);
    const ModelConfig& cfg = model.config();

    std::vector<std::size_t> offsets;
    std::vector<Var> sequences;
    std::size_t offset = 0;
    for (std::size_t s = 0; s < batch.sequences(); ++s) {
        std::vector<Var> parts;
        if (batch.image_tokens(s) > 0) {
            Var img = ops::matmul(g.constant(batch.images[s]), g.param(model.adapter.weight));
            parts.push_back(ops::add_row_vector(img, g.param(model.adapter.bias)));
        }
        if (!batch.text[s].empty()) {
            parts.push_back(ops::gather_rows(g.param(model.token_embedding), batch.text[s]));
        }
        Var x = parts.size() == 1 ? parts.front() : ops::concat_rows(parts);
        const std::size_t len = batch.sequence_length(s);
        std::vector<std::size_t> positions(len);
        std::iota(positions.begin(), positions.end(), std::size_t{0});
        sequences.push_back(ops::add(x, ops::gather_rows(g.param(model.position_embedding), positions)));
        offsets.push_back(offset);
        offset += len;
    }
    Var h = sequences.size() == 1 ? sequences.front() : ops::concat_rows(sequences);

    const ModalityTags tags = mode == ForwardMode::multimodal ? batch.tags() : ModalityTags{};
    ModelForward out;
    for (std::size_t l = 0; l < model.blocks.size(); ++l) {
        const Block& block = model.blocks[l];
        Var normed = ops::rms_norm_rows(h);
        std::vector<Var> attended;
        for (std::size_t s = 0; s < batch.sequences(); ++s) {
            Var seq = ops::slice_rows(normed, offsets[s], batch.sequence_length(s));
            attended.push_back(attention(g, block.attention, seq, cfg.heads));
        }
        h = ops::add(h, attended.size() == 1 ? attended.front() : ops::concat_rows(attended));

        Var ffn_in = ops::rms_norm_rows(h);
        Var ffn_out;
        if (const auto* dense = std::get_if<FfnParams>(&block.ffn)) {
            ffn_out = ffn_forward(g, *dense, ffn_in);
        } else if (mode == ForwardMode::language_only) {
            ffn_out = forward_language_only(g, std::get<EvfLayerParams>(block.ffn), ffn_in);
        } else {
            EvfForward f = forward_multimodal(g, std::get<EvfLayerParams>(block.ffn), ffn_in, tags,
                                              mix_seed(allocation_seed, l), l);
            ffn_out = f.output;
            out.evf_layers.push_back(EvfLayerTrace{l, f.probabilities, std::move(f.decision),
                                                   std::move(f.plan), f.telemetry});
        }
        h = ops::add(h, ffn_out);
    }
    out.logits = ops::matmul(ops::rms_norm_rows(h), g.param(model.head));
    return out;
}

Tensor forward_logits(const MicroModel& model, const TokenBatch& batch, ForwardMode mode,
                      std::uint64_t allocation_seed) {
    Graph g(false);
    return forward(g, model, batch, mode, allocation_seed).logits.value();
}

ModelLoss model_loss(Graph& g, const MicroModel& model, const TokenBatch& batch, double alpha,
                     std::uint64_t allocation_seed) {
    ModelForward fwd = forward(g, model, batch, ForwardMode::multimodal, allocation_seed);
    const std::vector<std::size_t> rows = batch.prediction_rows();
    const std::vector<std::size_t> targets = batch.prediction_targets();
    Var regressive = regressive_loss(g, ops::gather_rows(fwd.logits, rows), targets);

    ModelLoss out;
    double aux = 0.0;
    std::vector<LayerLoad> layers;
    if (fwd.evf_layers.empty()) {
        out.total = regressive;
    } else {
        std::vector<AllocationPlan> plans;
        std::vector<Var> probabilities;
        for (const EvfLayerTrace& t : fwd.evf_layers) {
            plans.push_back(t.plan);
            probabilities.push_back(t.probabilities);
        }
        AuxLossVar aux_var = aux_loss(g, plans, probabilities);
        aux = aux_var.value.value().item();
        layers = std::move(aux_var.layers);
        out.total = ops::add(regressive, ops::scale(aux_var.value, alpha));
    }
    out.breakdown = total_loss(regressive.value().item(), aux, alpha);
    out.breakdown.layers = std::move(layers);
    out.evf_layers = std::move(fwd.evf_layers);
    return out;
}

SyntheticTask::SyntheticTask(const SyntheticTaskConfig& cfg, std::size_t vocab, std::size_t feature_width)
    : cfg_(cfg), vocab_(vocab), feature_width_(feature_width) {
    if (cfg.keys == 0 || cfg.keys > feature_width) {
        throw ConfigError("task.keys", "must be in [1, image_feature_width]");
    }
    if (cfg.batch == 0) throw ConfigError("task.batch", "must be positive");
    if (cfg.text_tokens < 2) throw ConfigError("task.text_tokens", "need at least two text tokens");
    Rng rng(cfg.task_seed);
    for (std::size_t k = 0; k < cfg.keys; ++k) {
        std::vector<std::size_t> all(vocab);
        std::iota(all.begin(), all.end(), std::size_t{0});
        perms_.push_back(sample_without_replacement(rng, all, vocab));
    }
}

TokenBatch SyntheticTask::sample(Rng& rng) const {
    TokenBatch b;
    for (std::size_t s = 0; s < cfg_.batch; ++s) {
        const std::size_t key = static_cast<std::size_t>(rng.uniform_index(cfg_.keys));
        Tensor features(cfg_.image_tokens, feature_width_);
        for (std::size_t i = 0; i < cfg_.image_tokens; ++i) {
            for (std::size_t j = 0; j < feature_width_; ++j) {
                features(i, j) = (j == key ? 1.0 : 0.0) + cfg_.feature_noise * rng.normal();
            }
        }
        std::vector<std::size_t> text(cfg_.text_tokens);
        text[0] = static_cast<std::size_t>(rng.uniform_index(vocab_));
        for (std::size_t i = 1; i < text.size(); ++i) text[i] = perms_[key][text[i - 1]];
        b.images.push_back(std::move(features));
        b.text.push_back(std::move(text));
    }
    return b;
}

TokenBatch SyntheticTask::sample_text_only(Rng& rng, std::size_t sequences, std::size_t length) const {
    TokenBatch b;
    for (std::size_t s = 0; s < sequences; ++s) {
        std::vector<std::size_t> text(length);
        for (auto& t : text) t = static_cast<std::size_t>(rng.uniform_index(vocab_));
        b.text.push_back(std::move(text));
    }
    return b;
}

}  // namespace evf
