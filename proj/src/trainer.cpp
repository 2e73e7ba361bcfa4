// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/trainer.hpp"

#include "evf/errors.hpp"

#include <cmath>

namespace evf {

namespace {

constexpr std::uint64_t kEvalStream = 0xE7A1;

}  // namespace

double evaluation_loss(const MicroModel& model, const TrainConfig& cfg) {
    const SyntheticTask task(cfg.task, model.config().vocab, model.config().image_feature_width);
    Rng rng(mix_seed(cfg.data_seed, kEvalStream));
    const TokenBatch batch = task.sample(rng);
    Graph g(false);
    return model_loss(g, model, batch, cfg.alpha, mix_seed(cfg.allocation_seed, kEvalStream))
        .breakdown.regressive;
}

TrainResult train(MicroModel& model, const StageSchedule& schedule, const TrainConfig& cfg,
                  const StepCallback& on_step) {
    if (schedule.stage == 3 && !model.has_evf_layers()) {
        model.enter_stage3();
    }
    if (schedule.stage != 3 && model.has_evf_layers()) {
        throw ContractError("train: stages 1 and 2 run on the dense model");
    }
    model.apply_schedule(schedule);

    OptimizerConfig opt_cfg = cfg.optimizer;
    opt_cfg.total_steps = cfg.steps;
    AdamW optimizer(opt_cfg);

    const SyntheticTask task(cfg.task, model.config().vocab, model.config().image_feature_width);
    Rng data_rng(cfg.data_seed);

    TrainResult result;
    result.initial_eval_loss = evaluation_loss(model, cfg);
    const std::vector<Parameter*> params = model.trainable_parameters();

    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const TokenBatch batch = task.sample(data_rng);
        Graph g;
        ModelLoss loss = model_loss(g, model, batch, cfg.alpha, mix_seed(cfg.allocation_seed, step));
        if (!std::isfinite(loss.breakdown.total)) {
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        }
        g.backward(loss.total);
        for (Parameter* p : params) p->zero_grad();
        g.accumulate_into(params);

        StepRecord record;
        record.step = step;
        record.stage = schedule.stage;
        record.learning_rate = optimizer.step(params, step);
        record.loss = std::move(loss.breakdown);
        for (const EvfLayerTrace& t : loss.evf_layers) record.telemetry.push_back(t.telemetry);
        if (on_step) on_step(record);
        result.steps.push_back(std::move(record));
    }
    result.final_eval_loss = evaluation_loss(model, cfg);
    return result;
}

}  // namespace evf
