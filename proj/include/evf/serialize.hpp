// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/allocator.hpp"
#include "evf/evf_layer.hpp"
#include "evf/micro_model.hpp"
#include "evf/training.hpp"

#include <nlohmann/json.hpp>

namespace evf {

using json = nlohmann::json;

// JSON shapes shared by the CLI, the checkpoint manifest and the Python module.
// Config readers are strict: unknown keys raise ConfigError naming the key.

json to_json(const CapacityConfig& cfg);
json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const json& j);
json to_json(const OptimizerConfig& cfg);
OptimizerConfig optimizer_config_from_json(const json& j);
json to_json(const SyntheticTaskConfig& cfg);
SyntheticTaskConfig task_config_from_json(const json& j);

// {"strategy", "num_tokens", "capacity", "accepted": {"language": [...], "vision": [...]},
//  "dropped": [...], "redistributed": [{"token", "from", "to"}], "loads": {...}, "success_rate"}
json to_json(const AllocationPlan& plan);
json to_json(const AllocationStats& stats);
json to_json(const LayerTelemetry& t);
json to_json(const LayerLoad& load);
json to_json(const LossBreakdown& loss);
json to_json(const GradCheckReport& report);

// Throws ConfigError if `j` has keys outside `allowed`.
void require_known_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where);

}  // namespace evf
