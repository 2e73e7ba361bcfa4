// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line harness: grad-check, allocate-trace, train, telemetry-report.

#include "evf/errors.hpp"
#include "evf/harness.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

namespace fs = std::filesystem;
namespace h = evf::harness;

struct CommonArgs {
    std::optional<std::string> config;
    std::vector<std::string> overrides;
    std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config, "JSON run configuration");
    cmd->add_option("--set", args.overrides, "Override a config key, e.g. --set model.depth=6")->take_all();
    cmd->add_option("-o,--out", args.out, "Output directory (relative paths resolve under $EVF_OUTPUT_ROOT)");
}

// Returns nullopt after printing the error when the configuration is invalid.
std::optional<h::RunConfig> load(const CommonArgs& args, int& code) {
    std::vector<std::string> overrides = args.overrides;
    if (args.out) overrides.push_back("output_dir=\"" + *args.out + "\"");
    try {
        const fs::path path = args.config.value_or("");
        return h::load_run_config(args.config ? &path : nullptr, overrides);
    } catch (const evf::ConfigError& e) {
        std::cerr << "error: invalid configuration: " << e.what() << '\n';
        code = h::kValidationFailure;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: I/O: " << e.what() << '\n';
        code = h::kIoFailure;
    }
    return std::nullopt;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Elastic vision FFN reference harness"};
    app.require_subcommand(1);

    CommonArgs grad_args, trace_args, train_args;
    CLI::App* grad = app.add_subcommand("grad-check", "Finite-difference gradient check on sampled instances");
    add_common(grad, grad_args);

    CLI::App* trace = app.add_subcommand("allocate-trace", "Allocate a token fixture under every strategy");
    add_common(trace, trace_args);
    std::string fixture;
    trace->add_option("fixture", fixture, "Token fixture file")->required();

    CLI::App* train = app.add_subcommand("train", "Run the staged training schedule on the synthetic task");
    add_common(train, train_args);

    CLI::App* report = app.add_subcommand("telemetry-report", "Summarise allocation telemetry as CSV");
    std::vector<std::string> inputs;
    std::string csv = "telemetry_report.csv";
    report->add_option("files", inputs, "metrics.jsonl or telemetry.jsonl files")->required();
    report->add_option("--csv", csv, "Output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(h::kValidationFailure);
    }

    int code = h::kValidationFailure;
    if (grad->parsed()) {
        if (auto cfg = load(grad_args, code)) return h::cmd_grad_check(*cfg, std::cout);
    } else if (trace->parsed()) {
        if (auto cfg = load(trace_args, code)) return h::cmd_allocate_trace(*cfg, fixture, std::cout);
    } else if (train->parsed()) {
        if (auto cfg = load(train_args, code)) return h::cmd_train(*cfg, std::cout);
    } else if (report->parsed()) {
        std::vector<fs::path> files(inputs.begin(), inputs.end());
        return h::cmd_telemetry_report(files, csv, std::cout);
    }
    return code;
}
