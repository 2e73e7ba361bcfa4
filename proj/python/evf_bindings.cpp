// Copyright (c) 2026 The evf Authors.
// SPDX-License-Identifier: Apache-2.0

#include "evf/allocator.hpp"
#include "evf/checkpoint.hpp"
#include "evf/errors.hpp"
#include "evf/harness.hpp"
#include "evf/micro_model.hpp"
#include "evf/router.hpp"
#include "evf/serialize.hpp"
#include "evf/tensor.hpp"
#include "evf/training.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <sstream>

namespace py = pybind11;
using namespace evf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw DimensionError("expected a 2-d array, got " + std::to_string(a.ndim()) + "-d");
    const auto rows = static_cast<std::size_t>(a.shape(0));
    const auto cols = static_cast<std::size_t>(a.shape(1));
    return Tensor(rows, cols, std::vector<double>(a.data(), a.data() + rows * cols));
}

Array to_array(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

py::object to_python(const json& j) {
    return py::module_::import("json").attr("loads")(j.dump());
}

json from_python(const py::object& o) {
    return json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

ModalityTags make_tags(const std::vector<std::string>& labels, const std::vector<std::uint32_t>& groups) {
    ModalityTags tags;
    for (const auto& l : labels) {
        if (l == "image") {
            tags.labels.push_back(Modality::image);
        } else if (l == "text") {
            tags.labels.push_back(Modality::text);
        } else {
            throw ConfigError("labels", "unknown modality '" + l + "'");
        }
    }
    if (!groups.empty() && groups.size() != labels.size()) {
        throw DimensionError("groups must be empty or match labels in length");
    }
    tags.groups = groups;
    return tags;
}

RoutingDecision decision_from_logits(const Array& logits) {
    Tensor z = to_tensor(logits);
    if (z.cols() != kNumFfns) throw DimensionError("router logits must have two columns");
    RoutingDecision d;
    d.probabilities = kernels::softmax_rows(z);
    for (std::size_t t = 0; t < z.rows(); ++t) d.preferred.push_back(preferred_of(z(t, 0), z(t, 1)));
    d.logits = std::move(z);
    return d;
}

std::vector<std::string> preferred_names(const RoutingDecision& d) {
    std::vector<std::string> out;
    for (Ffn f : d.preferred) out.emplace_back(to_string(f));
    return out;
}

TokenBatch make_batch(const std::vector<std::vector<std::size_t>>& text, const std::vector<Array>& images,
                      std::size_t feature_width) {
    TokenBatch b;
    b.text = text;
    for (std::size_t s = 0; s < text.size(); ++s) {
        b.images.push_back(s < images.size() ? to_tensor(images[s]) : Tensor(0, feature_width));
    }
    return b;
}

}  // namespace

PYBIND11_MODULE(_evf, m) {
    m.doc() = "Elastic vision FFN reference implementation";

    py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<ContractError>(m, "ContractError", PyExc_RuntimeError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
    py::register_exception<EmptyBatchError>(m, "EmptyBatchError", PyExc_ValueError);
    py::register_exception<harness::FixtureParseError>(m, "FixtureParseError", PyExc_ValueError);

    py::enum_<Strategy>(m, "Strategy")
        .value("random", Strategy::random)
        .value("gbpr", Strategy::gbpr)
        .value("img_gbpr", Strategy::img_gbpr);

    m.def("parse_strategy", [](const std::string& s) { return parse_strategy(s); });
    m.def("mix_seed", &mix_seed, py::arg("seed"), py::arg("stream"));

    m.def("softmax_rows", [](const Array& x) { return to_array(kernels::softmax_rows(to_tensor(x))); });
    m.def("matmul", [](const Array& a, const Array& b) {
        return to_array(kernels::matmul(to_tensor(a), to_tensor(b)));
    });

    py::class_<RoutingDecision>(m, "RoutingDecision")
        .def_property_readonly("logits", [](const RoutingDecision& d) { return to_array(d.logits); })
        .def_property_readonly("probabilities", [](const RoutingDecision& d) { return to_array(d.probabilities); })
        .def_property_readonly("preferred", &preferred_names)
        .def("__len__", &RoutingDecision::size);

    m.def(
        "route",
        [](const Array& weight, const Array& tokens) {
            RouterParams r;
            r.weight.name = "router.weight";
            r.weight.value = to_tensor(weight);
            return route(r, to_tensor(tokens));
        },
        py::arg("weight"), py::arg("tokens"), "Routes tokens [n x d] through router weights [d x 2].");
    m.def("decision_from_logits", &decision_from_logits, py::arg("logits"));

    py::class_<ModalityTags>(m, "ModalityTags")
        .def(py::init(&make_tags), py::arg("labels"), py::arg("groups") = std::vector<std::uint32_t>{})
        .def("__len__", &ModalityTags::size)
        .def_property_readonly("image_count", &ModalityTags::image_count)
        .def_property_readonly("text_count", &ModalityTags::text_count);

    py::class_<CapacityConfig>(m, "CapacityConfig")
        .def(py::init([](double factor, double w_r, std::uint64_t seed) {
                 CapacityConfig c;
                 c.capacity_factor = factor;
                 c.redistribution_fraction = w_r;
                 c.seed = seed;
                 c.validate();
                 return c;
             }),
             py::arg("capacity_factor") = 1.5, py::arg("w_r") = 1.0, py::arg("seed") = 0)
        .def_readwrite("capacity_factor", &CapacityConfig::capacity_factor)
        .def_readwrite("w_r", &CapacityConfig::redistribution_fraction)
        .def_readwrite("seed", &CapacityConfig::seed);

    m.def(
        "compute_capacity",
        [](std::size_t n, double factor) {
            CapacityConfig c;
            c.capacity_factor = factor;
            return compute_capacity(n, c);
        },
        py::arg("n"), py::arg("capacity_factor") = 1.5);

    m.def(
        "priority_scores",
        [](const RoutingDecision& d, const ModalityTags& tags, Strategy s) -> py::object {
            PriorityScores p = priority_scores(d, tags, s);
            if (p.scores.size() == 0) return py::none();
            return to_array(p.scores);
        },
        py::arg("decision"), py::arg("tags"), py::arg("strategy"));

    py::class_<AllocationPlan>(m, "AllocationPlan")
        .def_readonly("num_tokens", &AllocationPlan::num_tokens)
        .def_readonly("capacity", &AllocationPlan::capacity)
        .def_readonly("dropped", &AllocationPlan::dropped)
        .def_readonly("pending", &AllocationPlan::pending)
        .def_property_readonly("accepted_language", [](const AllocationPlan& p) { return p.accepted_by(Ffn::language); })
        .def_property_readonly("accepted_vision", [](const AllocationPlan& p) { return p.accepted_by(Ffn::vision); })
        .def_property_readonly("assignment", [](const AllocationPlan& p) {
            std::vector<int> out(p.assignment.begin(), p.assignment.end());
            return out;
        })
        .def("to_dict", [](const AllocationPlan& p) { return to_python(to_json(p)); })
        .def("__eq__", [](const AllocationPlan& a, const AllocationPlan& b) { return a == b; });

    m.def("allocate",
          [](const RoutingDecision& d, const ModalityTags& tags, const CapacityConfig& cfg, Strategy s) {
              return allocate(d, priority_scores(d, tags, s), tags, cfg, s);
          },
          py::arg("decision"), py::arg("tags"), py::arg("config"), py::arg("strategy"),
          "Capacity allocation without redistribution.");
    m.def("redistribute",
          [](const AllocationPlan& plan, const RoutingDecision& d, const ModalityTags& tags, const CapacityConfig& cfg) {
              return redistribute(plan, d, priority_scores(d, tags, plan.strategy), cfg);
          },
          py::arg("plan"), py::arg("decision"), py::arg("tags"), py::arg("config"));
    m.def("dispatch", &dispatch, py::arg("decision"), py::arg("tags"), py::arg("config"), py::arg("strategy"));
    m.def(
        "allocation_stats",
        [](const AllocationPlan& p, const ModalityTags& tags) { return to_python(to_json(allocation_stats(p, tags))); },
        py::arg("plan"), py::arg("tags"));

    m.def(
        "aux_loss",
        [](const std::vector<AllocationPlan>& plans, const std::vector<RoutingDecision>& decisions) {
            return aux_loss(plans, decisions);
        },
        py::arg("plans"), py::arg("decisions"));
    m.def(
        "total_loss",
        [](double regressive, double aux, double alpha) { return to_python(to_json(total_loss(regressive, aux, alpha))); },
        py::arg("regressive"), py::arg("aux"), py::arg("alpha") = kDefaultAuxAlpha);

    py::class_<MicroModel>(m, "MicroModel")
        .def_static(
            "build",
            [](const py::object& cfg) {
                return MicroModel::build(cfg.is_none() ? ModelConfig{} : model_config_from_json(from_python(cfg)));
            },
            py::arg("config") = py::none())
        .def_property_readonly("stage", &MicroModel::stage)
        .def_property_readonly("config", [](const MicroModel& mm) { return to_python(to_json(mm.config())); })
        .def("enter_stage3", &MicroModel::enter_stage3)
        .def("frozen_digest", [](const MicroModel& mm) { return frozen_parameter_digest(mm); })
        .def("parameter_names",
             [](MicroModel& mm) {
                 std::vector<std::string> names;
                 for (Parameter* p : mm.parameters()) names.push_back(p->name);
                 return names;
             })
        .def(
            "forward_logits",
            [](const MicroModel& mm, const std::vector<std::vector<std::size_t>>& text,
               const std::vector<Array>& images, bool language_only, std::uint64_t seed) {
                const TokenBatch b = make_batch(text, images, mm.config().image_feature_width);
                return to_array(forward_logits(
                    mm, b, language_only ? ForwardMode::language_only : ForwardMode::multimodal, seed));
            },
            py::arg("text"), py::arg("images") = std::vector<Array>{}, py::arg("language_only") = false,
            py::arg("allocation_seed") = 0)
        .def("save", [](const MicroModel& mm, const std::filesystem::path& p) { save_checkpoint(mm, p); })
        .def_static("load", &load_checkpoint);

    m.def(
        "allocate_trace",
        [](const std::string& fixture, double factor, double w_r, std::uint64_t seed) {
            std::istringstream in(fixture);
            CapacityConfig cfg;
            cfg.capacity_factor = factor;
            cfg.redistribution_fraction = w_r;
            cfg.seed = seed;
            cfg.validate();
            return to_python(harness::allocate_trace(harness::parse_allocation_fixture(in), cfg));
        },
        py::arg("fixture"), py::arg("capacity_factor") = 1.5, py::arg("w_r") = 1.0, py::arg("seed") = 0);

    m.def(
        "train",
        [](const py::object& config, const std::vector<std::string>& overrides) {
            const json doc = harness::apply_overrides(config.is_none() ? json::object() : from_python(config), overrides);
            const harness::RunConfig cfg = harness::run_config_from_json(doc);
            std::ostringstream log;
            const int code = harness::cmd_train(cfg, log);
            return py::make_tuple(code, log.str());
        },
        py::arg("config") = py::none(), py::arg("overrides") = std::vector<std::string>{},
        "Runs the train command; returns (exit_code, log).");
}
