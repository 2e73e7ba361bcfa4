// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/micro_model.hpp"
#include "evf/training.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace evf {

struct TrainConfig {
    std::size_t steps = 500;
    // total_steps is replaced by `steps`.
    OptimizerConfig optimizer;
    double alpha = kDefaultAuxAlpha;
    SyntheticTaskConfig task;
    std::uint64_t data_seed = 7;
    std::uint64_t allocation_seed = 11;
};

struct StepRecord {
    std::size_t step = 0;
    int stage = 3;
    double learning_rate = 0.0;
    // Loss of the batch at this step, before the update.
    LossBreakdown loss;
    std::vector<LayerTelemetry> telemetry;
};

struct TrainResult {
    std::vector<StepRecord> steps;
    // Regressive loss on a fixed held-out batch before and after training.
    double initial_eval_loss = 0.0;
    double final_eval_loss = 0.0;
};

using StepCallback = std::function<void(const StepRecord&)>;

// Applies `schedule` (entering stage 3 first when needed), then runs AdamW on
// freshly sampled synthetic batches. Deterministic in (model, config).
TrainResult train(MicroModel& model, const StageSchedule& schedule, const TrainConfig& cfg,
                  const StepCallback& on_step = {});

// Regressive loss of the model on the task's fixed evaluation batch.
double evaluation_loss(const MicroModel& model, const TrainConfig& cfg);

}  // namespace evf
