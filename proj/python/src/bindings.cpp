// SPDX-License-Identifier: Apache-2.0
// Python module _hbgl. Structured values cross the boundary as JSON text;
// the hbgl package decodes them.

#include "hbgl/checkpoint.hpp"
#include "hbgl/config.hpp"
#include "hbgl/errors.hpp"
#include "hbgl/pipeline.hpp"

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace hbgl;

namespace {

py::array_t<bool> to_numpy(const AllowMatrix& a) {
    const auto n = static_cast<py::ssize_t>(a.size());
    py::array_t<bool> out({n, n});
    auto v = out.mutable_unchecked<2>();
    for (py::ssize_t i = 0; i < n; ++i)
        for (py::ssize_t j = 0; j < n; ++j) v(i, j) = a(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
    return out;
}

RunConfig config_of(const std::string& json_text) {
    Json doc;
    try {
        doc = Json::parse(json_text);
    } catch (const Json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return run_config_from_json(doc);
}

LabelSet ids_of(const LabelHierarchy& h, const std::vector<std::string>& names) {
    LabelSet out;
    for (const auto& n : names) out.push_back(h.id_of(n));
    return normalize(std::move(out));
}

std::vector<std::string> names_of(const LabelHierarchy& h, const LabelSet& ids) {
    std::vector<std::string> out;
    for (LabelId id : ids) out.push_back(h.name(id));
    return out;
}

Json raw_json(const std::vector<RawSample>& samples) {
    Json out = Json::array();
    for (const auto& s : samples) out.push_back({{"id", s.id}, {"text", s.text}, {"labels", s.labels}});
    return out;
}

// A trained classifier bundled with its vocabulary.
struct Classifier {
    LocalModel<float> model;
    Vocabulary vocab;

    std::vector<std::string> predict(const std::string& text, double threshold, bool cached) const {
        const auto tokens = tokenize(text, vocab);
        const Prediction p = cached ? predict_cached(model, tokens, threshold) : hbgl::predict(model, tokens, threshold);
        return names_of(model.hierarchy, p.labels);
    }
};

Classifier train_classifier(const std::string& config_json) {
    const RunConfig cfg = config_of(config_json);
    const PreparedData data = prepare_data(cfg.data);
    const TransformerEncoder<float> enc = pretrain_encoder(cfg, data.vocab, data.train);
    LabelEmbeddingTable<float> table = initial_label_table(cfg, data, enc);
    run_global(cfg, data, enc, table);
    return {run_local(cfg, data, enc, table), data.vocab};
}

}  // namespace

PYBIND11_MODULE(_hbgl, m) {
    m.doc() = "Hierarchy-guided label embeddings and level-wise decoding";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<IndexError>(m, "IndexError", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
    py::register_exception<NumericError>(m, "NumericError", base.ptr());

    py::class_<LabelHierarchy>(m, "Hierarchy")
        .def_static("from_json", [](const std::string& s) { return load_taxonomy(std::string_view(s)); })
        .def("to_json", &LabelHierarchy::to_json)
        .def("__len__", &LabelHierarchy::size)
        .def_property_readonly("depth", &LabelHierarchy::max_level)
        .def("name", &LabelHierarchy::name)
        .def("id", &LabelHierarchy::id_of)
        .def("level", &LabelHierarchy::level)
        .def("parents", [](const LabelHierarchy& h, LabelId i) { auto s = h.parents(i); return LabelSet(s.begin(), s.end()); })
        .def("children", [](const LabelHierarchy& h, LabelId i) { auto s = h.children(i); return LabelSet(s.begin(), s.end()); })
        .def("labels_at_level", &LabelHierarchy::labels_at_level)
        .def("local_hierarchy",
             [](const LabelHierarchy& h, const LabelSet& ids) { return local_hierarchy_of(h, normalize(ids)).levels; },
             py::arg("labels"), "Target labels grouped by level, one list per level.")
        .def("attention_mask", [](const LabelHierarchy& h) { return to_numpy(global_attention_mask(h)); },
             "Label-graph attention mask (L x L, bool).");

    m.def("packed_attention_mask",
          [](std::size_t text_tokens, int depth) { return to_numpy(packed_allow(PackedLayout{text_tokens, depth})); },
          py::arg("text_tokens"), py::arg("depth"),
          "Attention mask of the packed text + teacher + masked label sequence.");

    m.def("preset", [](const std::string& name) { return to_json(preset(name)).dump(); }, py::arg("name"));
    m.def("validate_config", [](const std::string& j) { return to_json(config_of(j)).dump(); }, py::arg("config"));

    m.def(
        "generate_synthetic",
        [](const std::string& config_json) {
            const SyntheticDataset d = generate_synthetic(config_of(config_json).data);
            return Json{{"taxonomy", Json::parse(d.taxonomy_json)},
                        {"train", raw_json(d.train)},
                        {"dev", raw_json(d.dev)},
                        {"test", raw_json(d.test)}}
                .dump();
        },
        py::arg("config"), py::call_guard<py::gil_scoped_release>());

    m.def(
        "run_experiment",
        [](const std::string& config_json, bool flat, bool random_init, bool invariants) {
            ExperimentOptions opts;
            opts.flat_baseline = flat;
            opts.random_init_arm = random_init;
            opts.check_invariants = invariants;
            const ExperimentResult r = run_experiment(config_of(config_json), opts);
            return Json{{"manifest", r.manifest}, {"invariants", r.invariants}, {"timings", r.timings}}.dump();
        },
        py::arg("config"), py::arg("flat_baseline") = true, py::arg("random_init") = true,
        py::arg("check_invariants") = false, py::call_guard<py::gil_scoped_release>());

    m.def(
        "f1",
        [](const LabelHierarchy& h, const std::vector<std::vector<std::string>>& pred,
           const std::vector<std::vector<std::string>>& gold, bool observed_only) {
            std::vector<LabelSet> p, g;
            for (const auto& x : pred) p.push_back(ids_of(h, x));
            for (const auto& x : gold) g.push_back(ids_of(h, x));
            const F1Report r = f1_report(p, g, h, observed_only ? MacroMode::kObservedOnly : MacroMode::kAllLabels);
            return Json{{"micro_f1", r.micro_f1}, {"macro_f1", r.macro_f1}, {"per_level_micro_f1", r.per_level_micro}}
                .dump();
        },
        py::arg("hierarchy"), py::arg("pred"), py::arg("gold"), py::arg("observed_only") = false);

    m.def("sha256_hex", [](const py::bytes& b) { return sha256_hex(std::string(b)); });

    py::class_<Classifier>(m, "Classifier")
        .def_static("train", &train_classifier, py::arg("config"), py::call_guard<py::gil_scoped_release>())
        .def_static(
            "load",
            [](const std::string& path) {
                const Checkpoint c = load_checkpoint(path);
                return Classifier{local_model_from_checkpoint(c), vocab_from_checkpoint(c)};
            },
            py::arg("path"))
        .def("save",
             [](const Classifier& c, const std::string& path) {
                 save_checkpoint(path, local_model_checkpoint(c.model, c.vocab));
             },
             py::arg("path"))
        .def_property_readonly("hierarchy", [](const Classifier& c) { return c.model.hierarchy; })
        .def("predict", &Classifier::predict, py::arg("text"), py::arg("threshold") = 0.5, py::arg("cached") = true,
             "Label names decoded level by level.");

    m.attr("__version__") = version_string();
}
