// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/harness.hpp"

#include "evf/checkpoint.hpp"
#include "evf/errors.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace evf::harness {

namespace {

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where = "") {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(where.empty() ? std::string(key) : where + "." + key, e.what());
    }
}

json to_json(const GradCheckSettings& g) {
    return {{"instances", g.instances},
            {"max_tries", g.max_tries},
            {"tolerance", g.tolerance},
            {"epsilon", g.epsilon},
            {"relative_floor", g.relative_floor},
            {"batch", g.batch},
            {"image_tokens", g.image_tokens},
            {"text_tokens", g.text_tokens},
            {"router_init_std", g.router_init_std},
            {"vision_offset_std", g.vision_offset_std},
            {"freeze_all", g.freeze_all},
            {"corrupt_scale", g.corrupt_scale}};
}

GradCheckSettings grad_check_from_json(const json& j) {
    require_known_keys(j,
                       {"instances", "max_tries", "tolerance", "epsilon", "relative_floor", "batch",
                        "image_tokens", "text_tokens", "router_init_std", "vision_offset_std",
                        "freeze_all", "corrupt_scale"},
                       "grad_check");
    GradCheckSettings g;
    const std::string w = "grad_check";
    read(j, "instances", g.instances, w);
    read(j, "max_tries", g.max_tries, w);
    read(j, "tolerance", g.tolerance, w);
    read(j, "epsilon", g.epsilon, w);
    read(j, "relative_floor", g.relative_floor, w);
    read(j, "batch", g.batch, w);
    read(j, "image_tokens", g.image_tokens, w);
    read(j, "text_tokens", g.text_tokens, w);
    read(j, "router_init_std", g.router_init_std, w);
    read(j, "vision_offset_std", g.vision_offset_std, w);
    read(j, "freeze_all", g.freeze_all, w);
    read(j, "corrupt_scale", g.corrupt_scale, w);
    return g;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::filesystem::filesystem_error("cannot write", path, std::make_error_code(std::errc::io_error));
    out << text;
    if (!out) throw std::filesystem::filesystem_error("write failed", path, std::make_error_code(std::errc::io_error));
}

// Runs `body`, translating exceptions into exit codes.
template <typename F>
int guarded(std::ostream& log, F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        log << "error: invalid configuration: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const FixtureParseError& e) {
        log << "error: malformed fixture: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const ContractError& e) {
        log << "error: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const DimensionError& e) {
        log << "error: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const EmptyBatchError& e) {
        log << "error: " << e.what() << '\n';
        return kValidationFailure;
    } catch (const NumericError& e) {
        log << "error: numeric failure: " << e.what() << '\n';
        return kNumericFailure;
    } catch (const std::filesystem::filesystem_error& e) {
        log << "error: I/O: " << e.what() << '\n';
        return kIoFailure;
    } catch (const CheckpointError& e) {
        log << "error: I/O: " << e.what() << '\n';
        return kIoFailure;
    }
}

}  // namespace

ModelConfig RunConfig::resolved_model() const {
    ModelConfig m = model;
    m.strategy = strategy;
    m.capacity.capacity_factor = capacity_factor;
    m.capacity.redistribution_fraction = w_r;
    m.seed = seed;
    return m;
}

TrainConfig RunConfig::train_config(int for_stage, std::size_t step_count) const {
    TrainConfig t;
    t.steps = step_count;
    t.optimizer = optimizer;
    t.optimizer.learning_rate = stage_learning_rates.at(static_cast<std::size_t>(for_stage - 1));
    t.alpha = alpha;
    t.task = task;
    t.data_seed = mix_seed(data_seed, static_cast<std::uint64_t>(for_stage));
    t.allocation_seed = allocation_seed;
    return t;
}

void RunConfig::validate() const {
    if (stage < 1 || stage > 3) throw ConfigError("stage", "must be 1, 2 or 3");
    resolved_model().validate();
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ConfigError("alpha", "must be finite and non-negative");
    for (double lr : stage_learning_rates) {
        if (!(lr >= 0.0)) throw ConfigError("stage_learning_rates", "must be non-negative");
    }
    if (task.keys > model.image_feature_width) {
        throw ConfigError("task.keys", "cannot exceed model.image_feature_width");
    }
    if (grad_check.text_tokens < 2) throw ConfigError("grad_check.text_tokens", "need at least two text tokens");
    if (!(grad_check.epsilon > 0.0)) throw ConfigError("grad_check.epsilon", "must be positive");
}

json to_json(const RunConfig& cfg) {
    json model = evf::to_json(cfg.model);
    model.erase("capacity");
    model.erase("strategy");
    model.erase("seed");
    return {{"model", model},
            {"stage", cfg.stage},
            {"strategy", std::string(to_string(cfg.strategy))},
            {"capacity_factor", cfg.capacity_factor},
            {"w_r", cfg.w_r},
            {"seed", cfg.seed},
            {"data_seed", cfg.data_seed},
            {"allocation_seed", cfg.allocation_seed},
            {"stage1_steps", cfg.stage1_steps},
            {"stage2_steps", cfg.stage2_steps},
            {"steps", cfg.steps},
            {"stage_learning_rates", cfg.stage_learning_rates},
            {"optimizer", evf::to_json(cfg.optimizer)},
            {"alpha", cfg.alpha},
            {"task", evf::to_json(cfg.task)},
            {"grad_check", to_json(cfg.grad_check)},
            {"output_dir", cfg.output_dir}};
}

RunConfig run_config_from_json(const json& j) {
    require_known_keys(j,
                       {"model", "stage", "strategy", "capacity_factor", "w_r", "seed", "data_seed",
                        "allocation_seed", "stage1_steps", "stage2_steps", "steps", "stage_learning_rates",
                        "optimizer", "alpha", "task", "grad_check", "output_dir"},
                       "");
    RunConfig cfg;
    if (j.contains("model")) {
        json m = j.at("model");
        for (const char* k : {"capacity", "strategy", "seed"}) {
            if (m.contains(k)) {
                throw ConfigError(std::string("model.") + k, "set this at the top level of the run config");
            }
        }
        cfg.model = model_config_from_json(m);
    }
    read(j, "stage", cfg.stage);
    if (j.contains("strategy")) {
        if (!j.at("strategy").is_string()) throw ConfigError("strategy", "must be a string");
        cfg.strategy = parse_strategy(j.at("strategy").get<std::string>());
    }
    read(j, "capacity_factor", cfg.capacity_factor);
    read(j, "w_r", cfg.w_r);
    read(j, "seed", cfg.seed);
    read(j, "data_seed", cfg.data_seed);
    read(j, "allocation_seed", cfg.allocation_seed);
    read(j, "stage1_steps", cfg.stage1_steps);
    read(j, "stage2_steps", cfg.stage2_steps);
    read(j, "steps", cfg.steps);
    read(j, "stage_learning_rates", cfg.stage_learning_rates);
    if (j.contains("optimizer")) cfg.optimizer = optimizer_config_from_json(j.at("optimizer"));
    read(j, "alpha", cfg.alpha);
    if (j.contains("task")) cfg.task = task_config_from_json(j.at("task"));
    if (j.contains("grad_check")) cfg.grad_check = grad_check_from_json(j.at("grad_check"));
    read(j, "output_dir", cfg.output_dir);
    cfg.validate();
    return cfg;
}

json apply_overrides(json doc, std::span<const std::string> assignments) {
    for (const std::string& a : assignments) {
        const auto eq = a.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError(a, "override must look like key=value");
        }
        const std::string key = a.substr(0, eq);
        const std::string text = a.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::exception&) {
            value = text;
        }
        json* node = &doc;
        std::string::size_type start = 0;
        while (true) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ConfigError(key, "empty path component");
            if (!node->is_object()) throw ConfigError(key, "cannot descend into a non-object");
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            if (node->is_null()) *node = json::object();
            start = dot + 1;
        }
    }
    return doc;
}

RunConfig load_run_config(const std::filesystem::path* file, std::span<const std::string> overrides) {
    json doc = json::object();
    if (file != nullptr) {
        std::ifstream in(*file);
        if (!in) {
            throw std::filesystem::filesystem_error("cannot open config", *file,
                                                    std::make_error_code(std::errc::no_such_file_or_directory));
        }
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError(file->string(), e.what());
        }
    }
    return run_config_from_json(apply_overrides(std::move(doc), overrides));
}

std::filesystem::path resolve_output_dir(const RunConfig& cfg) {
    const std::filesystem::path dir = cfg.output_dir.empty() ? "evf_out" : cfg.output_dir;
    if (dir.is_absolute()) return dir;
    const char* root = std::getenv(kOutputRootEnv);
    return (root != nullptr && *root != '\0') ? std::filesystem::path(root) / dir : dir;
}

AllocationFixture parse_allocation_fixture(std::istream& in) {
    std::vector<double> logits;
    AllocationFixture f;
    std::string line;
    std::size_t number = 0;
    bool any_group = false;
    while (std::getline(in, line)) {
        ++number;
        std::istringstream ls(line);
        std::string keyword;
        if (!(ls >> keyword) || keyword.front() == '#') continue;
        if (keyword != "token") throw FixtureParseError(number, "unknown directive '" + keyword + "'");
        std::string modality;
        double lang = 0.0, vis = 0.0;
        if (!(ls >> modality >> lang >> vis)) {
            throw FixtureParseError(number, "expected: token <image|text> <logit_language> <logit_vision> [sequence]");
        }
        if (modality == "image") {
            f.tags.labels.push_back(Modality::image);
        } else if (modality == "text") {
            f.tags.labels.push_back(Modality::text);
        } else {
            throw FixtureParseError(number, "unknown modality '" + modality + "'");
        }
        if (!std::isfinite(lang) || !std::isfinite(vis)) throw FixtureParseError(number, "non-finite logit");
        long long group = 0;
        if (ls >> group) {
            if (group < 0) throw FixtureParseError(number, "negative sequence index");
            any_group = true;
        } else if (!ls.eof()) {
            throw FixtureParseError(number, "malformed sequence index");
        }
        std::string trailing;
        if (ls.clear(), ls >> trailing) throw FixtureParseError(number, "unexpected trailing text '" + trailing + "'");
        f.tags.groups.push_back(static_cast<std::uint32_t>(group));
        logits.push_back(lang);
        logits.push_back(vis);
    }
    if (f.tags.size() == 0) throw FixtureParseError(number, "fixture contains no tokens");
    if (!any_group) f.tags.groups.clear();
    const std::size_t n = f.tags.size();
    Tensor z(n, kNumFfns, std::move(logits));
    Tensor p = kernels::softmax_rows(z);
    for (std::size_t t = 0; t < n; ++t) f.decision.preferred.push_back(preferred_of(z(t, 0), z(t, 1)));
    f.decision.logits = std::move(z);
    f.decision.probabilities = std::move(p);
    return f;
}

json allocate_trace(const AllocationFixture& fixture, const CapacityConfig& cfg) {
    json plans = json::object();
    for (Strategy s : {Strategy::random, Strategy::gbpr, Strategy::img_gbpr}) {
        const AllocationPlan plan = dispatch(fixture.decision, fixture.tags, cfg, s);
        json pj = evf::to_json(plan);
        pj["stats"] = evf::to_json(allocation_stats(plan, fixture.tags));
        plans[std::string(to_string(s))] = std::move(pj);
    }
    return {{"num_tokens", fixture.tags.size()},
            {"capacity", compute_capacity(fixture.tags.size(), cfg)},
            {"config", evf::to_json(cfg)},
            {"plans", plans}};
}

GradCheckRun run_grad_check(const RunConfig& cfg) {
    const GradCheckSettings& gs = cfg.grad_check;
    GradCheckOptions options;
    options.epsilon = gs.epsilon;
    options.relative_floor = gs.relative_floor;
    options.analytic_scale = gs.corrupt_scale;

    SyntheticTaskConfig task_cfg = cfg.task;
    task_cfg.batch = gs.batch;
    task_cfg.image_tokens = gs.image_tokens;
    task_cfg.text_tokens = gs.text_tokens;

    GradCheckRun run;
    for (std::size_t inst = 0; inst < gs.instances; ++inst) {
        bool accepted = false;
        for (std::size_t attempt = 0; attempt < gs.max_tries && !accepted; ++attempt) {
            const std::uint64_t instance_seed = mix_seed(mix_seed(cfg.seed, inst), attempt);
            ModelConfig mc = cfg.resolved_model();
            mc.seed = instance_seed;
            MicroModel model = MicroModel::build(mc);
            Rng rng(mix_seed(instance_seed, 0x6C));
            if (cfg.stage == 3) {
                model.enter_stage3();
                for (Block& b : model.blocks) {
                    auto* layer = std::get_if<EvfLayerParams>(&b.ffn);
                    if (layer == nullptr) continue;
                    for (double& v : layer->router.weight.value.data()) v = gs.router_init_std * rng.normal();
                    for (Parameter* p : layer->vision_ffn.parameters()) {
                        for (double& v : p->value.data()) v += gs.vision_offset_std * rng.normal();
                    }
                }
            } else {
                model.apply_schedule(StageSchedule::for_stage(cfg.stage));
            }
            if (gs.freeze_all) {
                for (Parameter* p : model.parameters()) p->trainable = false;
            }
            const SyntheticTask task(task_cfg, mc.vocab, mc.image_feature_width);
            Rng data_rng(mix_seed(instance_seed, 0xDA7A));
            const TokenBatch batch = task.sample(data_rng);
            const std::uint64_t alloc_seed = mix_seed(instance_seed, 0xA11C);

            LossFunction loss_fn = [&](Graph& g) {
                ModelLoss l = model_loss(g, model, batch, cfg.alpha, alloc_seed);
                LossProbe probe;
                probe.loss = l.total;
                for (EvfLayerTrace& t : l.evf_layers) probe.plans.push_back(std::move(t.plan));
                return probe;
            };
            try {
                const std::vector<Parameter*> params = model.parameters();
                GradCheckReport report = grad_check(params, loss_fn, options);
                run.max_relative_error = std::max(run.max_relative_error, report.max_relative_error);
                run.reports.push_back(std::move(report));
                accepted = true;
            } catch (const InstanceRejected&) {
                ++run.rejected_instances;
            }
        }
        if (!accepted) {
            run.exhausted = true;
            break;
        }
    }
    return run;
}

int cmd_grad_check(const RunConfig& cfg, std::ostream& log) {
    return guarded(log, [&] {
        const std::filesystem::path out = resolve_output_dir(cfg);
        std::filesystem::create_directories(out);
        const GradCheckRun run = run_grad_check(cfg);

        json reports = json::array();
        for (const auto& r : run.reports) reports.push_back(evf::to_json(r));
        const bool passed = !run.exhausted && run.max_relative_error < cfg.grad_check.tolerance;
        const json doc = {{"tolerance", cfg.grad_check.tolerance},
                          {"epsilon", cfg.grad_check.epsilon},
                          {"instances", reports},
                          {"rejected_instances", run.rejected_instances},
                          {"exhausted", run.exhausted},
                          {"max_relative_error", run.max_relative_error},
                          {"passed", passed}};
        write_text(out / "grad_check_report.json", doc.dump(2) + "\n");

        std::size_t scalars = 0;
        for (const auto& r : run.reports) scalars += r.scalars_checked;
        log << "grad-check: " << run.reports.size() << " instances, " << scalars << " scalars, "
            << run.rejected_instances << " rejected, max relative error " << std::scientific
            << std::setprecision(3) << run.max_relative_error << std::defaultfloat << '\n';
        if (run.exhausted) {
            log << "grad-check: instance sampling exhausted after " << cfg.grad_check.max_tries << " tries\n";
            return static_cast<int>(kNumericFailure);
        }
        return static_cast<int>(passed ? kOk : kNumericFailure);
    });
}

int cmd_allocate_trace(const RunConfig& cfg, const std::filesystem::path& fixture, std::ostream& out) {
    return guarded(out, [&] {
        std::ifstream in(fixture);
        if (!in) {
            throw std::filesystem::filesystem_error("cannot open fixture", fixture,
                                                    std::make_error_code(std::errc::no_such_file_or_directory));
        }
        const AllocationFixture f = parse_allocation_fixture(in);
        CapacityConfig cap = cfg.resolved_model().capacity;
        cap.seed = cfg.allocation_seed;
        const json trace = allocate_trace(f, cap);
        const std::filesystem::path dir = resolve_output_dir(cfg);
        std::filesystem::create_directories(dir);
        write_text(dir / "allocate_trace.json", trace.dump(2) + "\n");
        out << trace.dump(2) << '\n';
        return static_cast<int>(kOk);
    });
}

namespace {

json metrics_line(const StepRecord& r) {
    json layers = json::array();
    for (std::size_t i = 0; i < r.telemetry.size(); ++i) {
        const LayerTelemetry& t = r.telemetry[i];
        json l = i < r.loss.layers.size() ? evf::to_json(r.loss.layers[i]) : json::object();
        l["layer"] = t.layer;
        l["strategy"] = std::string(to_string(t.strategy));
        l["success_rate"] = t.stats.success_rate;
        l["drop_rate"] = t.stats.drop_rate;
        layers.push_back(std::move(l));
    }
    return {{"step", r.step},
            {"stage", r.stage},
            {"lr", r.learning_rate},
            {"L_regressive", r.loss.regressive},
            {"L_aux", r.loss.aux},
            {"L_total", r.loss.total},
            {"alpha", r.loss.alpha},
            {"layers", layers}};
}

}  // namespace

int cmd_train(const RunConfig& cfg, std::ostream& log) {
    return guarded(log, [&] {
        const std::filesystem::path out = resolve_output_dir(cfg);
        std::filesystem::create_directories(out / "checkpoints");
        write_text(out / "run_config.json", to_json(cfg).dump(2) + "\n");

        std::ofstream metrics(out / "metrics.jsonl", std::ios::trunc);
        std::ofstream telemetry(out / "telemetry.jsonl", std::ios::trunc);
        if (!metrics || !telemetry) {
            throw std::filesystem::filesystem_error("cannot open metrics streams", out,
                                                    std::make_error_code(std::errc::io_error));
        }
        auto sink = [&](const StepRecord& r) {
            metrics << metrics_line(r).dump() << '\n';
            for (const LayerTelemetry& t : r.telemetry) {
                json tj = evf::to_json(t);
                tj["step"] = r.step;
                tj["stage"] = r.stage;
                telemetry << tj.dump() << '\n';
            }
        };

        MicroModel model = MicroModel::build(cfg.resolved_model());
        json summary = {{"stages", json::array()}};
        auto run_stage = [&](int stage, std::size_t steps) {
            const TrainResult r = train(model, StageSchedule::for_stage(stage), cfg.train_config(stage, steps), sink);
            summary["stages"].push_back({{"stage", stage},
                                         {"steps", steps},
                                         {"initial_eval_loss", r.initial_eval_loss},
                                         {"final_eval_loss", r.final_eval_loss}});
            log << "stage " << stage << ": " << steps << " steps, eval loss " << r.initial_eval_loss << " -> "
                << r.final_eval_loss << '\n';
        };

        if (cfg.stage >= 2 && cfg.stage1_steps > 0) run_stage(1, cfg.stage1_steps);
        if (cfg.stage == 3 && cfg.stage2_steps > 0) run_stage(2, cfg.stage2_steps);
        if (cfg.stage == 3) {
            if (model.stage() == 1 && cfg.stage2_steps == 0) model.apply_schedule(StageSchedule::for_stage(2));
            save_checkpoint(model, out / "checkpoints" / "stage2.evfc");
            model.enter_stage3();
            summary["frozen_digest_before"] = frozen_parameter_digest(model);
        }
        run_stage(cfg.stage, cfg.steps);
        if (cfg.stage == 3) {
            summary["frozen_digest_after"] = frozen_parameter_digest(model);
            summary["frozen_unchanged"] = summary["frozen_digest_before"] == summary["frozen_digest_after"];
        }
        save_checkpoint(model, out / "checkpoints" / "final.evfc");
        write_text(out / "summary.json", summary.dump(2) + "\n");
        metrics.flush();
        telemetry.flush();
        if (!metrics || !telemetry) {
            throw std::filesystem::filesystem_error("metrics write failed", out,
                                                    std::make_error_code(std::errc::io_error));
        }
        return static_cast<int>(kOk);
    });
}

namespace {

struct SeriesStats {
    std::size_t records = 0;
    double sum = 0.0;
    double first = 0.0;
    double last = 0.0;
    double min = 1.0;
    std::size_t first_step = 0;
    std::size_t last_step = 0;

    double mean() const { return records == 0 ? 0.0 : sum / static_cast<double>(records); }
};

void add_record(std::map<std::pair<std::size_t, std::string>, SeriesStats>& table, const json& rec,
                std::size_t step) {
    if (!rec.contains("layer") || !rec.contains("success_rate") || !rec.contains("strategy")) {
        throw ContractError("telemetry record lacks layer/strategy/success_rate");
    }
    const auto key = std::make_pair(rec.at("layer").get<std::size_t>(), rec.at("strategy").get<std::string>());
    const double rate = rec.at("success_rate").get<double>();
    SeriesStats& s = table[key];
    if (s.records == 0 || step < s.first_step) {
        s.first = rate;
        s.first_step = step;
    }
    if (s.records == 0 || step >= s.last_step) {
        s.last = rate;
        s.last_step = step;
    }
    s.min = s.records == 0 ? rate : std::min(s.min, rate);
    s.sum += rate;
    ++s.records;
}

}  // namespace

int cmd_telemetry_report(std::span<const std::filesystem::path> files, const std::filesystem::path& csv,
                         std::ostream& out) {
    return guarded(out, [&] {
        // (layer, strategy) -> success-rate series
        std::map<std::pair<std::size_t, std::string>, SeriesStats> table;
        for (const auto& file : files) {
            std::ifstream in(file);
            if (!in) {
                throw std::filesystem::filesystem_error("cannot open metrics file", file,
                                                        std::make_error_code(std::errc::no_such_file_or_directory));
            }
            std::string line;
            std::size_t number = 0;
            while (std::getline(in, line)) {
                ++number;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                json rec;
                try {
                    rec = json::parse(line);
                } catch (const json::exception& e) {
                    throw ContractError(file.string() + ":" + std::to_string(number) + ": " + e.what());
                }
                const std::size_t step = rec.value("step", number);
                if (rec.contains("layers")) {
                    for (const json& l : rec.at("layers")) add_record(table, l, step);
                } else {
                    add_record(table, rec, step);
                }
            }
        }
        if (table.empty()) {
            out << "error: empty report: no telemetry records in the given files\n";
            return static_cast<int>(kValidationFailure);
        }

        std::map<std::size_t, std::vector<std::pair<std::string, double>>> by_layer;
        for (const auto& [key, s] : table) by_layer[key.first].emplace_back(key.second, s.mean());
        std::map<std::size_t, std::string> ordering;
        std::map<std::pair<std::size_t, std::string>, std::size_t> rank;
        for (auto& [layer, entries] : by_layer) {
            std::stable_sort(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.second > b.second; });
            std::string text;
            for (std::size_t i = 0; i < entries.size(); ++i) {
                if (i > 0) text += entries[i - 1].second > entries[i].second ? ">" : "=";
                text += entries[i].first;
                rank[{layer, entries[i].first}] = i + 1;
            }
            ordering[layer] = text;
        }

        std::ostringstream os;
        os << "strategy,layer,records,mean_success_rate,first_success_rate,final_success_rate,min_success_rate,"
              "rank,layer_ordering\n";
        os << std::setprecision(10);
        for (const auto& [key, s] : table) {
            os << key.second << ',' << key.first << ',' << s.records << ',' << s.mean() << ',' << s.first << ','
               << s.last << ',' << s.min << ',' << rank[key] << ',' << ordering[key.first] << '\n';
        }
        if (csv.has_parent_path()) std::filesystem::create_directories(csv.parent_path());
        write_text(csv, os.str());
        out << os.str();
        return static_cast<int>(kOk);
    });
}

}  // namespace evf::harness
