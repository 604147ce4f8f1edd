// SPDX-License-Identifier: Apache-2.0
#include "hbgl/config.hpp"

#include "hbgl/errors.hpp"
#include "hbgl/special_tokens.hpp"

#include <cerrno>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#ifndef HBGL_VERSION_STRING
#define HBGL_VERSION_STRING "unknown"
#endif

namespace hbgl {

namespace {

// Reads fields of one JSON object and remembers which keys were consumed.
class Section {
public:
    Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    template <class V>
    void read(const char* key, V& out) {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            if constexpr (std::is_same_v<V, bool>) {
                if (!it->is_boolean()) throw ConfigError("");
            } else if constexpr (std::is_integral_v<V>) {
                if (!it->is_number_integer()) throw ConfigError("");
                if constexpr (std::is_unsigned_v<V>)
                    if (it->template get<long long>() < 0) throw ConfigError("");
            } else if constexpr (std::is_floating_point_v<V>) {
                if (!it->is_number()) throw ConfigError("");
            } else {
                if (!it->is_string()) throw ConfigError("");
            }
            out = it->template get<V>();
        } catch (const std::exception&) {
            throw ConfigError(where() + "." + key + " has the wrong type");
        }
    }

    const Json& sub(const char* key) {
        seen_.insert(key);
        static const Json kEmpty = Json::object();
        auto it = j_.find(key);
        return it == j_.end() ? kEmpty : *it;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.contains(it.key())) throw ConfigError("unknown config key '" + where() + it.key() + "'");
    }

private:
    std::string where() const { return path_.empty() ? "" : path_ + "."; }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

const char* to_string(LabelInit init) { return init == LabelInit::kLabelName ? "label_name" : "random"; }

LabelInit parse_label_init(const std::string& s) {
    if (s == "label_name") return LabelInit::kLabelName;
    if (s == "random") return LabelInit::kRandom;
    throw ConfigError("global.label_init must be 'label_name' or 'random', got '" + s + "'");
}

}  // namespace

void RunConfig::resolve_seeds() {
    mlm.seed = derive_seed(seed, 1);
    global.seed = derive_seed(seed, 2);
    local.seed = derive_seed(seed, 3);
}

void RunConfig::validate() const {
    EncoderConfig probe = encoder;
    probe.vocab_size = tokens::kNumReserved + 1;
    probe.validate();
    if (mlm.steps < 0 || mlm.batch_size < 1 || !(mlm.mask_prob > 0.0 && mlm.mask_prob < 1.0) ||
        !(mlm.learning_rate > 0.0) || mlm.max_length < 1)
        throw ConfigError("mlm: steps >= 0, batch_size >= 1, 0 < mask_prob < 1, learning_rate > 0 required");
    global.validate();
    if (!(recovery_ratio > 0.0 && recovery_ratio < 1.0)) throw ConfigError("global.recovery_ratio must lie in (0, 1)");
    local.validate();
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("local.threshold must lie in (0, 1)");
    data.validate();
}

Json to_json(const EncoderConfig& c) {
    return Json{{"hidden_size", c.hidden_size}, {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
                {"ffn_size", c.ffn_size},       {"max_positions", c.max_positions}, {"dropout", c.dropout}};
}

EncoderConfig encoder_config_from_json(const Json& j) {
    EncoderConfig c;
    Section s(j, "encoder");
    s.read("hidden_size", c.hidden_size);
    s.read("num_layers", c.num_layers);
    s.read("num_heads", c.num_heads);
    s.read("ffn_size", c.ffn_size);
    s.read("max_positions", c.max_positions);
    s.read("dropout", c.dropout);
    s.read("vocab_size", c.vocab_size);
    s.finish();
    return c;
}

Json to_json(const RunConfig& c) {
    Json j;
    j["seed"] = c.seed;
    j["encoder"] = to_json(c.encoder);
    j["mlm"] = {{"steps", c.mlm.steps},
                {"batch_size", c.mlm.batch_size},
                {"mask_prob", c.mlm.mask_prob},
                {"learning_rate", c.mlm.learning_rate},
                {"max_length", c.mlm.max_length}};
    j["global"] = {{"mask_ratio_start", c.global.mask_ratio_start},
                   {"mask_ratio_max", c.global.mask_ratio_max},
                   {"steps", c.global.steps},
                   {"batch_size", c.global.batch_size},
                   {"learning_rate", c.global.learning_rate},
                   {"label_init", to_string(c.label_init)},
                   {"recovery_ratio", c.recovery_ratio}};
    j["local"] = {{"epochs", c.local.epochs},
                  {"batch_size", c.local.batch_size},
                  {"learning_rate", c.local.learning_rate},
                  {"empty_level", to_string(c.empty_level)},
                  {"threshold", c.threshold}};
    const auto& d = c.data;
    j["data"] = {{"depth", d.depth},
                 {"branching", d.branching},
                 {"num_labels", d.num_labels},
                 {"multi_path_prob", d.multi_path_prob},
                 {"signature_tokens_per_label", d.signature_tokens_per_label},
                 {"noise_tokens", d.noise_tokens},
                 {"text_len", d.text_len},
                 {"n_samples", d.n_samples},
                 {"mentions_per_label", d.mentions_per_label},
                 {"distractor_prob", d.distractor_prob},
                 {"label_skew", d.label_skew},
                 {"dag_extra_edges", d.dag_extra_edges},
                 {"seed", d.seed}};
    return j;
}

RunConfig run_config_from_json(const Json& j) {
    RunConfig c;
    Section top(j, "");
    top.read("seed", c.seed);
    {
        const Json& e = top.sub("encoder");
        c.encoder = encoder_config_from_json(e);
    }
    {
        Section s(top.sub("mlm"), "mlm");
        s.read("steps", c.mlm.steps);
        s.read("batch_size", c.mlm.batch_size);
        s.read("mask_prob", c.mlm.mask_prob);
        s.read("learning_rate", c.mlm.learning_rate);
        s.read("max_length", c.mlm.max_length);
        s.finish();
    }
    {
        Section s(top.sub("global"), "global");
        s.read("mask_ratio_start", c.global.mask_ratio_start);
        s.read("mask_ratio_max", c.global.mask_ratio_max);
        s.read("steps", c.global.steps);
        s.read("batch_size", c.global.batch_size);
        s.read("learning_rate", c.global.learning_rate);
        std::string init = to_string(c.label_init);
        s.read("label_init", init);
        c.label_init = parse_label_init(init);
        s.read("recovery_ratio", c.recovery_ratio);
        s.finish();
    }
    {
        Section s(top.sub("local"), "local");
        s.read("epochs", c.local.epochs);
        s.read("batch_size", c.local.batch_size);
        s.read("learning_rate", c.local.learning_rate);
        std::string empty = to_string(c.empty_level);
        s.read("empty_level", empty);
        c.empty_level = parse_empty_level(empty);
        s.read("threshold", c.threshold);
        s.finish();
    }
    {
        auto& d = c.data;
        Section s(top.sub("data"), "data");
        s.read("depth", d.depth);
        s.read("branching", d.branching);
        s.read("num_labels", d.num_labels);
        s.read("multi_path_prob", d.multi_path_prob);
        s.read("signature_tokens_per_label", d.signature_tokens_per_label);
        s.read("noise_tokens", d.noise_tokens);
        s.read("text_len", d.text_len);
        s.read("n_samples", d.n_samples);
        s.read("mentions_per_label", d.mentions_per_label);
        s.read("distractor_prob", d.distractor_prob);
        s.read("label_skew", d.label_skew);
        s.read("dag_extra_edges", d.dag_extra_edges);
        s.read("seed", d.seed);
        s.finish();
    }
    top.finish();
    c.validate();
    c.resolve_seeds();
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    Json j;
    try {
        j = Json::parse(ss.str());
    } catch (const Json::parse_error& e) {
        throw ParseError("config '" + path + "': " + e.what(), e.byte);
    }
    return run_config_from_json(j);
}

void apply_override(Json& doc, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ConfigError("override '" + std::string(assignment) + "' must look like path.to.key=value");
    const std::string path(assignment.substr(0, eq));
    const std::string raw(assignment.substr(eq + 1));
    Json value = Json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;

    Json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (key.empty()) throw ConfigError("override path '" + path + "' has an empty component");
        if (!node->is_object()) throw ConfigError("override path '" + path + "' descends into a non-object");
        if (dot == std::string::npos) {
            (*node)[key] = value;
            return;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

RunConfig preset(std::string_view name) {
    RunConfig c;
    if (name == "default") {
        // Library defaults.
    } else if (name == "desk") {
        c.mlm.steps = 600;
        c.global.steps = 300;
        c.local.epochs = 4;
        c.local.learning_rate = 1e-3;
    } else if (name == "tiny") {
        c.encoder.hidden_size = 32;
        c.encoder.num_layers = 1;
        c.encoder.num_heads = 2;
        c.encoder.ffn_size = 64;
        c.encoder.max_positions = 64;
        c.mlm.steps = 20;
        c.mlm.batch_size = 8;
        c.global.steps = 20;
        c.global.batch_size = 4;
        c.local.epochs = 1;
        c.local.learning_rate = 1e-3;
        c.data.depth = 2;
        c.data.branching = 3;
        c.data.num_labels = 9;
        c.data.noise_tokens = 60;
        c.data.text_len = 12;
        c.data.n_samples = 120;
    } else {
        throw ConfigError("unknown preset '" + std::string(name) + "' (expected default, desk or tiny)");
    }
    c.resolve_seeds();
    return c;
}

std::optional<std::uint64_t> seed_from_env() {
    const char* raw = std::getenv("HBGL_SEED");
    if (raw == nullptr || *raw == '\0') return std::nullopt;
    char* end = nullptr;
    errno = 0;
    const unsigned long long v = std::strtoull(raw, &end, 10);
    if (errno != 0 || end == raw || *end != '\0' || raw[0] == '-')
        throw ConfigError(std::string("HBGL_SEED must be a non-negative integer, got '") + raw + "'");
    return static_cast<std::uint64_t>(v);
}

std::string version_string() { return HBGL_VERSION_STRING; }

}  // namespace hbgl
