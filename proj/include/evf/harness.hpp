// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "evf/allocator.hpp"
#include "evf/micro_model.hpp"
#include "evf/serialize.hpp"
#include "evf/trainer.hpp"
#include "evf/training.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evf::harness {

enum ExitCode : int {
    kOk = 0,
    kValidationFailure = 2,
    kNumericFailure = 3,
    kIoFailure = 4,
};

// Environment variable naming the directory relative output paths resolve against.
inline constexpr const char* kOutputRootEnv = "EVF_OUTPUT_ROOT";

struct GradCheckSettings {
    std::size_t instances = 10;
    std::size_t max_tries = 100;
    double tolerance = 1e-4;
    double epsilon = 1e-5;
    double relative_floor = 1e-6;
    // Shape of each sampled instance.
    std::size_t batch = 1;
    std::size_t image_tokens = 1;
    std::size_t text_tokens = 9;
    // Sampled instances move the model away from its symmetric stage-3 start.
    double router_init_std = 0.5;
    double vision_offset_std = 0.05;
    bool freeze_all = false;
    // Test hook: scales analytic gradients before comparison.
    double corrupt_scale = 1.0;
};

struct RunConfig {
    // Strategy and capacity of `model` are taken from the top-level fields below.
    ModelConfig model;
    int stage = 3;
    Strategy strategy = Strategy::img_gbpr;
    double capacity_factor = 1.5;
    double w_r = 1.0;
    std::uint64_t seed = 0;
    std::uint64_t data_seed = 7;
    std::uint64_t allocation_seed = 11;
    std::size_t stage1_steps = 0;
    std::size_t stage2_steps = 0;
    // Steps of the final stage.
    std::size_t steps = 500;
    // Desk-scale defaults; stage 1, 2, 3.
    std::array<double, 3> stage_learning_rates{1e-3, 1e-3, 1e-3};
    OptimizerConfig optimizer;
    double alpha = kDefaultAuxAlpha;
    SyntheticTaskConfig task;
    GradCheckSettings grad_check;
    std::string output_dir = "evf_out";

    ModelConfig resolved_model() const;
    TrainConfig train_config(int for_stage, std::size_t step_count) const;
    void validate() const;
};

json to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const json& j);

// Applies "dotted.key=value" assignments. Values parse as JSON when possible and
// as plain strings otherwise.
json apply_overrides(json doc, std::span<const std::string> assignments);

// Reads an optional JSON config file, applies overrides, validates.
RunConfig load_run_config(const std::filesystem::path* file, std::span<const std::string> overrides);

std::filesystem::path resolve_output_dir(const RunConfig& cfg);

class FixtureParseError : public std::runtime_error {
public:
    FixtureParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Allocation fixture, one token per line:
//   token <image|text> <logit_language> <logit_vision> [sequence]
// Blank lines and lines starting with '#' are ignored.
struct AllocationFixture {
    RoutingDecision decision;
    ModalityTags tags;
};

AllocationFixture parse_allocation_fixture(std::istream& in);

// {"num_tokens", "capacity", "config", "plans": {"random", "gbpr", "img_gbpr"}}
json allocate_trace(const AllocationFixture& fixture, const CapacityConfig& cfg);

struct GradCheckRun {
    std::vector<GradCheckReport> reports;
    std::size_t rejected_instances = 0;
    double max_relative_error = 0.0;
    bool exhausted = false;
};

GradCheckRun run_grad_check(const RunConfig& cfg);

// Commands return an ExitCode and write artifacts under resolve_output_dir().
int cmd_grad_check(const RunConfig& cfg, std::ostream& log);
int cmd_allocate_trace(const RunConfig& cfg, const std::filesystem::path& fixture, std::ostream& out);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_telemetry_report(std::span<const std::filesystem::path> files, const std::filesystem::path& csv,
                         std::ostream& out);

}  // namespace evf::harness
