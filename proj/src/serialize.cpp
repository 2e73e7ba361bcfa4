// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/serialize.hpp"

#include "evf/errors.hpp"

#include <algorithm>

namespace evf {

void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where, "expected a JSON object");
    }
    for (const auto& item : j.items()) {
        const bool known = std::any_of(allowed.begin(), allowed.end(),
                                       [&](const char* k) { return item.key() == k; });
        if (!known) {
            throw ConfigError(where.empty() ? item.key() : where + "." + item.key(), "unknown key");
        }
    }
}

namespace {

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) {
        return;
    }
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where.empty() ? std::string(key) : where + "." + key, e.what());
    }
}

}  // namespace

json to_json(const CapacityConfig& cfg) {
    return {{"capacity_factor", cfg.capacity_factor},
            {"num_ffns", cfg.num_ffns},
            {"redistribution_fraction", cfg.redistribution_fraction},
            {"seed", cfg.seed}};
}

json to_json(const ModelConfig& cfg) {
    return {{"depth", cfg.depth},
            {"width", cfg.width},
            {"heads", cfg.heads},
            {"hidden", cfg.hidden},
            {"vocab", cfg.vocab},
            {"image_feature_width", cfg.image_feature_width},
            {"max_positions", cfg.max_positions},
            {"evf_layer_indices", cfg.evf_layer_indices},
            {"capacity", to_json(cfg.capacity)},
            {"strategy", std::string(to_string(cfg.strategy))},
            {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    require_known_keys(j,
                       {"depth", "width", "heads", "hidden", "vocab", "image_feature_width",
                        "max_positions", "evf_layer_indices", "capacity", "strategy", "seed"},
                       "model");
    ModelConfig cfg;
    read(j, "depth", cfg.depth, "model");
    read(j, "width", cfg.width, "model");
    read(j, "heads", cfg.heads, "model");
    read(j, "hidden", cfg.hidden, "model");
    read(j, "vocab", cfg.vocab, "model");
    read(j, "image_feature_width", cfg.image_feature_width, "model");
    read(j, "max_positions", cfg.max_positions, "model");
    if (j.contains("evf_layer_indices")) {
        read(j, "evf_layer_indices", cfg.evf_layer_indices, "model");
    } else {
        cfg.evf_layer_indices = ModelConfig::alternating_layers(cfg.depth);
    }
    read(j, "seed", cfg.seed, "model");
    if (j.contains("strategy")) {
        cfg.strategy = parse_strategy(j.at("strategy").get<std::string>());
    }
    if (j.contains("capacity")) {
        const json& c = j.at("capacity");
        require_known_keys(c, {"capacity_factor", "num_ffns", "redistribution_fraction", "seed"}, "model.capacity");
        read(c, "capacity_factor", cfg.capacity.capacity_factor, "model.capacity");
        read(c, "num_ffns", cfg.capacity.num_ffns, "model.capacity");
        read(c, "redistribution_fraction", cfg.capacity.redistribution_fraction, "model.capacity");
        read(c, "seed", cfg.capacity.seed, "model.capacity");
    }
    cfg.validate();
    return cfg;
}

json to_json(const OptimizerConfig& cfg) {
    return {{"learning_rate", cfg.learning_rate}, {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},                 {"epsilon", cfg.epsilon},
            {"weight_decay", cfg.weight_decay},   {"warmup_ratio", cfg.warmup_ratio},
            {"total_steps", cfg.total_steps},     {"cosine_decay", cfg.cosine_decay}};
}

OptimizerConfig optimizer_config_from_json(const json& j) {
    require_known_keys(j,
                       {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay", "warmup_ratio",
                        "total_steps", "cosine_decay"},
                       "optimizer");
    OptimizerConfig cfg;
    read(j, "learning_rate", cfg.learning_rate, "optimizer");
    read(j, "beta1", cfg.beta1, "optimizer");
    read(j, "beta2", cfg.beta2, "optimizer");
    read(j, "epsilon", cfg.epsilon, "optimizer");
    read(j, "weight_decay", cfg.weight_decay, "optimizer");
    read(j, "warmup_ratio", cfg.warmup_ratio, "optimizer");
    read(j, "total_steps", cfg.total_steps, "optimizer");
    read(j, "cosine_decay", cfg.cosine_decay, "optimizer");
    if (!(cfg.learning_rate >= 0.0)) throw ConfigError("optimizer.learning_rate", "must be non-negative");
    if (!(cfg.warmup_ratio >= 0.0 && cfg.warmup_ratio <= 1.0)) {
        throw ConfigError("optimizer.warmup_ratio", "must lie in [0, 1]");
    }
    return cfg;
}

json to_json(const SyntheticTaskConfig& cfg) {
    return {{"keys", cfg.keys},
            {"batch", cfg.batch},
            {"image_tokens", cfg.image_tokens},
            {"text_tokens", cfg.text_tokens},
            {"feature_noise", cfg.feature_noise},
            {"task_seed", cfg.task_seed}};
}

SyntheticTaskConfig task_config_from_json(const json& j) {
    require_known_keys(j, {"keys", "batch", "image_tokens", "text_tokens", "feature_noise", "task_seed"}, "task");
    SyntheticTaskConfig cfg;
    read(j, "keys", cfg.keys, "task");
    read(j, "batch", cfg.batch, "task");
    read(j, "image_tokens", cfg.image_tokens, "task");
    read(j, "text_tokens", cfg.text_tokens, "task");
    read(j, "feature_noise", cfg.feature_noise, "task");
    read(j, "task_seed", cfg.task_seed, "task");
    return cfg;
}

json to_json(const AllocationPlan& plan) {
    json redistributed = json::array();
    for (const auto& r : plan.redistributed) {
        redistributed.push_back({{"token", r.token},
                                 {"from", std::string(to_string(r.from))},
                                 {"to", std::string(to_string(r.to))}});
    }
    const double n = static_cast<double>(plan.num_tokens);
    const std::size_t accepted = plan.load(Ffn::language) + plan.load(Ffn::vision);
    json j = {{"strategy", std::string(to_string(plan.strategy))},
              {"num_tokens", plan.num_tokens},
              {"capacity", plan.capacity},
              {"accepted",
               {{"language", plan.accepted_by(Ffn::language)}, {"vision", plan.accepted_by(Ffn::vision)}}},
              {"dropped", plan.dropped},
              {"redistributed", redistributed},
              {"loads", {{"language", plan.load(Ffn::language)}, {"vision", plan.load(Ffn::vision)}}},
              {"success_rate", plan.num_tokens == 0 ? 1.0 : static_cast<double>(accepted) / n}};
    if (!plan.group_capacities.empty()) {
        j["group_capacities"] = plan.group_capacities;
    }
    if (plan.awaiting_redistribution) {
        j["pending"] = plan.pending;
    }
    return j;
}

json to_json(const AllocationStats& s) {
    return {{"total", s.total},
            {"accepted", s.accepted},
            {"dropped", s.dropped},
            {"redistributed", s.redistributed},
            {"success_rate", s.success_rate},
            {"drop_rate", s.drop_rate},
            {"load_language", s.loads[index_of(Ffn::language)]},
            {"load_vision", s.loads[index_of(Ffn::vision)]},
            {"image_success_rate", s.image_success_rate()},
            {"text_success_rate", s.text_success_rate()}};
}

json to_json(const LayerTelemetry& t) {
    json j = to_json(t.stats);
    j["layer"] = t.layer;
    j["strategy"] = std::string(to_string(t.strategy));
    j["vision_probability_histogram"] = t.vision_probability_histogram;
    return j;
}

json to_json(const LayerLoad& load) {
    return {{"F_i", load.f_image}, {"F_t", load.f_text}, {"G_i", load.g_image}, {"G_t", load.g_text}};
}

json to_json(const LossBreakdown& loss) {
    json layers = json::array();
    for (const auto& l : loss.layers) layers.push_back(to_json(l));
    return {{"L_regressive", loss.regressive},
            {"L_aux", loss.aux},
            {"alpha", loss.alpha},
            {"L_total", loss.total},
            {"layers", layers}};
}

json to_json(const GradCheckReport& report) {
    json entries = json::array();
    for (const auto& e : report.entries) {
        entries.push_back({{"name", e.name},
                           {"scalars", e.scalars},
                           {"max_relative_error", e.max_relative_error},
                           {"max_absolute_error", e.max_absolute_error},
                           {"worst_index", e.worst_index}});
    }
    return {{"max_relative_error", report.max_relative_error},
            {"scalars_checked", report.scalars_checked},
            {"entries", entries}};
}

}  // namespace evf
