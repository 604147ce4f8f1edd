// SPDX-License-Identifier: Apache-2.0
// Command-line entry point for the data, training, prediction and
// evaluation pipeline.

#include "hbgl/checkpoint.hpp"
#include "hbgl/config.hpp"
#include "hbgl/data.hpp"
#include "hbgl/errors.hpp"
#include "hbgl/global_embed.hpp"
#include "hbgl/local_encoder.hpp"
#include "hbgl/metrics.hpp"
#include "hbgl/pipeline.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace hbgl;

namespace {

// Errors that map to exit code 2.
class UsageError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "usage_error"; }
};

struct ConfigFlags {
    std::string config_path;
    std::string preset = "default";
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app) {
        app->add_option("--config", config_path, "JSON run config (overlays the preset)");
        app->add_option("--preset", preset, "Starting preset: default, desk, tiny");
        app->add_option("--set", overrides, "Override a config value: section.key=value");
        app->add_option("--seed", seed, "Run seed (takes precedence over HBGL_SEED)");
    }

    RunConfig resolve() const {
        Json doc = to_json(hbgl::preset(preset));
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw ConfigError("config file '" + config_path + "' does not exist");
            Json file;
            try {
                file = Json::parse(read_file(config_path));
            } catch (const Json::parse_error& e) {
                throw ConfigError("config file '" + config_path + "' is not valid JSON: " + e.what());
            }
            if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
            doc.merge_patch(file);
        }
        for (const auto& o : overrides) apply_override(doc, o);
        if (auto env = seed_from_env()) doc["seed"] = *env;
        if (seed) doc["seed"] = *seed;
        return run_config_from_json(doc);
    }
};

Json manifest_for(const std::string& command, const RunConfig& cfg) {
    Json m;
    m["command"] = command;
    m["version"] = version_string();
    m["config"] = to_json(cfg);
    return m;
}

void write_json(const std::string& path, const Json& j) { write_file_atomic(path, j.dump(2) + "\n"); }

std::string manifest_path(const std::string& artifact) { return artifact + ".manifest.json"; }

std::vector<RawSample> read_jsonl_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open '" + path + "'");
    return read_jsonl(in);
}

LabelHierarchy read_taxonomy(const std::string& path) { return load_taxonomy(read_file(path)); }

std::string labels_json_line(const std::string& id, const LabelHierarchy& h, const Prediction& p, bool flat) {
    Json j;
    if (!id.empty()) j["id"] = id;
    Json names = Json::array();
    for (LabelId l : p.labels) names.push_back(h.name(l));
    j["labels"] = names;
    Json scores = Json::object();
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto l = static_cast<LabelId>(i);
        const Eigen::Index row = flat ? 0 : h.level(l) - 1;
        scores[h.name(l)] = p.scores(row, l);
    }
    j["scores"] = scores;
    return j.dump();
}

int cmd_gen_data(const ConfigFlags& flags, const std::string& out_dir) {
    const RunConfig cfg = flags.resolve();
    const SyntheticDataset ds = generate_synthetic(cfg.data);
    auto dump = [&](const std::string& name, const std::vector<RawSample>& s) {
        std::ostringstream ss;
        write_jsonl(ss, s);
        write_file_atomic((fs::path(out_dir) / name).string(), ss.str());
    };
    write_file_atomic((fs::path(out_dir) / "taxonomy.json").string(), ds.taxonomy_json);
    dump("train.jsonl", ds.train);
    dump("dev.jsonl", ds.dev);
    dump("test.jsonl", ds.test);
    Json m = manifest_for("gen-data", cfg);
    m["counts"] = {{"train", ds.train.size()}, {"dev", ds.dev.size()}, {"test", ds.test.size()}};
    write_json((fs::path(out_dir) / "manifest.json").string(), m);
    return 0;
}

int cmd_build_vocab(const std::string& taxonomy, const std::string& train, int min_count, const std::string& out) {
    const LabelHierarchy h = read_taxonomy(taxonomy);
    std::vector<std::string> texts;
    for (const auto& s : read_jsonl_file(train)) texts.push_back(s.text);
    for (std::size_t i = 0; i < h.size(); ++i) texts.push_back(h.name(static_cast<LabelId>(i)));
    const Vocabulary v = Vocabulary::build(texts, min_count);
    write_file_atomic(out, v.to_text());
    return 0;
}

Vocabulary read_vocab(const std::string& path) { return Vocabulary::from_text(read_file(path)); }

int cmd_pretrain_mlm(const ConfigFlags& flags, const std::string& vocab_path, const std::string& train,
                     const std::string& out) {
    const RunConfig cfg = flags.resolve();
    const Vocabulary vocab = read_vocab(vocab_path);
    std::vector<Sample> corpus;
    for (const auto& r : read_jsonl_file(train)) corpus.push_back({r.id, tokenize(r.text, vocab), {}});
    MlmReport report;
    const TransformerEncoder<float> enc = pretrain_encoder(cfg, vocab, corpus, &report);
    save_checkpoint(out, encoder_checkpoint(enc, vocab));
    Json m = manifest_for("pretrain-mlm", cfg);
    m["losses"] = report.losses;
    m["masked_tokens"] = report.masked_tokens;
    write_json(manifest_path(out), m);
    return 0;
}

int cmd_train_global(const ConfigFlags& flags, const std::string& taxonomy, const std::string& encoder_path,
                     const std::string& out) {
    const RunConfig cfg = flags.resolve();
    const LabelHierarchy h = read_taxonomy(taxonomy);
    const Checkpoint ck = load_checkpoint(encoder_path);
    TransformerEncoder<float> enc = encoder_from_checkpoint(ck);
    enc.set_all_frozen(true);
    const Vocabulary vocab = vocab_from_checkpoint(ck);
    LabelEmbeddingTable<float> table = cfg.label_init == LabelInit::kLabelName
                                           ? init_from_names(h, enc, vocab, cfg.global.seed)
                                           : init_random(h.size(), enc.config().hidden_size, cfg.global.seed);
    const std::string before = encoder_digest(enc);
    const GlobalTrainReport r = train_global(h, enc, table, cfg.global);
    if (encoder_digest(enc) != before) throw Error("encoder parameters changed during global training");
    save_checkpoint(out, label_table_checkpoint(table));
    Json m = manifest_for("train-global", cfg);
    m["schedule"] = {{"increment", r.increment}, {"steps", r.ratios.size()}, {"ratios", r.ratios}};
    m["losses"] = r.losses;
    m["encoder_sha256"] = before;
    write_json(manifest_path(out), m);
    return 0;
}

int cmd_train_local(const ConfigFlags& flags, const std::string& taxonomy, const std::string& train,
                    const std::string& encoder_path, const std::string& labels_path, const std::string& baseline,
                    const std::string& empty_level, const std::string& out) {
    RunConfig cfg = flags.resolve();
    if (!empty_level.empty()) cfg.empty_level = parse_empty_level(empty_level);
    if (!baseline.empty() && baseline != "flat") throw UsageError("--baseline only accepts 'flat'");
    const LabelHierarchy h = read_taxonomy(taxonomy);
    const Checkpoint ck = load_checkpoint(encoder_path);
    const Vocabulary vocab = vocab_from_checkpoint(ck);
    const TransformerEncoder<float> enc = encoder_from_checkpoint(ck);
    const std::vector<Sample> samples = encode_samples(read_jsonl_file(train), vocab, h);
    require_valid(samples, h);

    Json m = manifest_for("train-local", cfg);
    TrainReport report;
    if (baseline == "flat") {
        FlatModel model(h, enc, cfg.local.seed);
        report = train_flat_baseline(model, samples, cfg.local);
        save_checkpoint(out, flat_model_checkpoint(model, vocab));
        m["baseline"] = "flat";
    } else {
        LabelEmbeddingTable<float> table;
        if (!labels_path.empty()) {
            table = label_table_from_checkpoint(load_checkpoint(labels_path));
        } else {
            table = cfg.label_init == LabelInit::kLabelName
                        ? init_from_names(h, enc, vocab, cfg.global.seed)
                        : init_random(h.size(), enc.config().hidden_size, cfg.global.seed);
        }
        if (table.size() != h.size()) throw ShapeError("label embeddings do not match the taxonomy");
        LocalModel<float> model{h, enc, table, cfg.empty_level};
        report = train_local(model, samples, cfg.local);
        save_checkpoint(out, local_model_checkpoint(model, vocab));
    }
    m["steps"] = report.steps;
    m["epoch_losses"] = report.epoch_losses;
    write_json(manifest_path(out), m);
    return 0;
}

int cmd_predict(const std::string& model_path, const std::string& input, const std::string& out, double threshold,
                bool no_cache) {
    if (!(threshold > 0.0 && threshold < 1.0)) throw UsageError("--threshold must lie in (0, 1)");
    const Checkpoint ck = load_checkpoint(model_path);
    const Vocabulary vocab = vocab_from_checkpoint(ck);
    const std::vector<RawSample> raw = read_jsonl_file(input);
    std::ostringstream ss;
    if (model_kind(ck) == "flat") {
        const FlatModel model = flat_model_from_checkpoint(ck);
        for (const auto& r : raw)
            ss << labels_json_line(r.id, model.hierarchy, predict_flat(model, tokenize(r.text, vocab), threshold), true)
               << '\n';
    } else {
        const LocalModel<float> model = local_model_from_checkpoint(ck);
        for (const auto& r : raw) {
            const auto text = tokenize(r.text, vocab);
            const Prediction p = no_cache ? predict(model, text, threshold) : predict_cached(model, text, threshold);
            ss << labels_json_line(r.id, model.hierarchy, p, false) << '\n';
        }
    }
    write_file_atomic(out, ss.str());
    return 0;
}

// Label lists of a JSONL file; lines need "labels" and may carry "id".
std::vector<std::pair<std::string, std::vector<std::string>>> read_label_lines(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::pair<std::string, std::vector<std::string>>> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const Json j = Json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object() || !j.contains("labels") || !j["labels"].is_array())
            throw ValidationError(path + " line " + std::to_string(line_no) + ": expected an object with \"labels\"");
        std::vector<std::string> names;
        for (const auto& l : j["labels"]) names.push_back(l.get<std::string>());
        out.emplace_back(j.contains("id") ? j["id"].get<std::string>() : std::string(), std::move(names));
    }
    return out;
}

int cmd_evaluate(const std::string& taxonomy, const std::string& pred_path, const std::string& gold_path,
                 bool observed_only, const std::string& out) {
    const LabelHierarchy h = read_taxonomy(taxonomy);
    const auto pred_raw = read_label_lines(pred_path);
    const auto gold_raw = read_label_lines(gold_path);
    if (pred_raw.size() != gold_raw.size())
        throw ValidationError(std::to_string(pred_raw.size()) + " predictions for " + std::to_string(gold_raw.size()) +
                              " gold samples");
    std::vector<LabelSet> pred, gold;
    for (std::size_t i = 0; i < pred_raw.size(); ++i) {
        const auto& [pid, pnames] = pred_raw[i];
        const auto& [gid, gnames] = gold_raw[i];
        if (!pid.empty() && !gid.empty() && pid != gid)
            throw ValidationError("prediction " + std::to_string(i + 1) + " has id '" + pid + "', gold has '" + gid + "'");
        LabelSet p, g;
        for (const auto& n : pnames) p.push_back(h.id_of(n));
        for (const auto& n : gnames) g.push_back(h.id_of(n));
        pred.push_back(normalize(std::move(p)));
        gold.push_back(normalize(std::move(g)));
    }
    const F1Report rep = f1_report(pred, gold, h, observed_only ? MacroMode::kObservedOnly : MacroMode::kAllLabels);
    const std::string body = rep.to_json(h) + "\n";
    if (out.empty())
        std::cout << body;
    else
        write_file_atomic(out, body);
    return 0;
}

int cmd_repro(const ConfigFlags& flags, int seeds, const std::string& out_dir, bool quiet) {
    const RunConfig base = flags.resolve();
    if (seeds < 1) throw UsageError("--seeds must be >= 1");
    Json runs = Json::array();
    Json invariants = Json::object();
    Json timings = Json::array();
    double local_macro = 0, flat_macro = 0, random_macro = 0, local_micro = 0, flat_micro = 0;
    bool all_pass = true;
    for (int k = 0; k < seeds; ++k) {
        RunConfig cfg = base;
        cfg.seed = base.seed + static_cast<std::uint64_t>(k);
        cfg.resolve_seeds();
        ExperimentOptions opts;
        opts.check_invariants = (k == 0);
        if (!quiet) opts.log = [k](const std::string& m) { std::cerr << "[seed " << k << "] " << m << "\n"; };
        ExperimentResult r = run_experiment(cfg, opts);
        local_macro += r.local_test.macro_f1 / seeds;
        local_micro += r.local_test.micro_f1 / seeds;
        flat_macro += r.flat_test->macro_f1 / seeds;
        flat_micro += r.flat_test->micro_f1 / seeds;
        random_macro += r.random_init_test->macro_f1 / seeds;
        if (k == 0) {
            invariants = r.invariants;
            for (auto it = invariants.begin(); it != invariants.end(); ++it)
                if (it.value().is_object()) all_pass = all_pass && it.value().value("pass", false);
        }
        runs.push_back(r.manifest);
        timings.push_back(r.timings);
    }
    Json metrics;
    metrics["seeds"] = seeds;
    metrics["local_macro_f1"] = local_macro;
    metrics["local_micro_f1"] = local_micro;
    metrics["flat_macro_f1"] = flat_macro;
    metrics["flat_micro_f1"] = flat_micro;
    metrics["random_init_macro_f1"] = random_macro;
    metrics["local_minus_flat_macro_points"] = 100.0 * (local_macro - flat_macro);
    write_json((fs::path(out_dir) / "metrics.json").string(), metrics);
    write_json((fs::path(out_dir) / "invariants.json").string(), invariants);
    Json m = manifest_for("repro", base);
    m["runs"] = runs;
    write_json((fs::path(out_dir) / "manifest.json").string(), m);
    write_json((fs::path(out_dir) / "timings.json").string(), timings);
    std::cout << metrics.dump(2) << "\n";
    if (!all_pass) throw Error("invariant check failed; see invariants.json");
    return 0;
}

void report_error(const char* kind, const std::string& message) {
    std::cerr << Json{{"error", kind}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchy-guided text classification toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    ConfigFlags flags;
    std::string out, taxonomy, train, vocab, encoder, labels, model, input, pred, gold, baseline, empty_level;
    int min_count = 1, seeds = 1;
    double threshold = 0.5;
    bool no_cache = false, observed_only = false, quiet = false;

    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic taxonomy and corpus");
    flags.attach(gen);
    gen->add_option("--out", out, "Output directory")->required();

    auto* bv = app.add_subcommand("build-vocab", "Build a vocabulary from training texts and label names");
    bv->add_option("--taxonomy", taxonomy)->required();
    bv->add_option("--train", train)->required();
    bv->add_option("--min-count", min_count);
    bv->add_option("--out", out)->required();

    auto* mlm = app.add_subcommand("pretrain-mlm", "Masked-token pretraining of a fresh encoder");
    flags.attach(mlm);
    mlm->add_option("--vocab", vocab)->required();
    mlm->add_option("--train", train)->required();
    mlm->add_option("--out", out)->required();

    auto* tg = app.add_subcommand("train-global", "Train label embeddings against a frozen encoder");
    flags.attach(tg);
    tg->add_option("--taxonomy", taxonomy)->required();
    tg->add_option("--encoder", encoder)->required();
    tg->add_option("--out", out)->required();

    auto* tl = app.add_subcommand("train-local", "Fine-tune encoder and label embeddings");
    flags.attach(tl);
    tl->add_option("--taxonomy", taxonomy)->required();
    tl->add_option("--train", train)->required();
    tl->add_option("--encoder", encoder)->required();
    tl->add_option("--labels", labels, "Label-embedding checkpoint from train-global");
    tl->add_option("--baseline", baseline, "'flat' trains the flat multi-label baseline");
    tl->add_option("--empty-level", empty_level, "Empty-level filler: sep or zero");
    tl->add_option("--out", out)->required();

    auto* pr = app.add_subcommand("predict", "Predict labels for a JSONL file");
    pr->add_option("--model", model)->required();
    pr->add_option("--input", input)->required();
    pr->add_option("--out", out)->required();
    pr->add_option("--threshold", threshold);
    pr->add_flag("--no-cache", no_cache, "Recompute every level from scratch");

    auto* ev = app.add_subcommand("evaluate", "Micro/Macro F1 of predictions against gold labels");
    ev->add_option("--taxonomy", taxonomy)->required();
    ev->add_option("--pred", pred)->required();
    ev->add_option("--gold", gold)->required();
    ev->add_flag("--macro-observed-only", observed_only);
    ev->add_option("--out", out);

    auto* rp = app.add_subcommand("repro", "Run the full pipeline and write metrics and invariant reports");
    flags.attach(rp);
    rp->add_option("--seeds", seeds, "Number of consecutive seeds");
    rp->add_option("--out", out)->required();
    rp->add_flag("--quiet", quiet);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage_error", e.what());
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(flags, out);
        if (bv->parsed()) return cmd_build_vocab(taxonomy, train, min_count, out);
        if (mlm->parsed()) return cmd_pretrain_mlm(flags, vocab, train, out);
        if (tg->parsed()) return cmd_train_global(flags, taxonomy, encoder, out);
        if (tl->parsed())
            return cmd_train_local(flags, taxonomy, train, encoder, labels, baseline, empty_level, out);
        if (pr->parsed()) return cmd_predict(model, input, out, threshold, no_cache);
        if (ev->parsed()) return cmd_evaluate(taxonomy, pred, gold, observed_only, out);
        if (rp->parsed()) return cmd_repro(flags, seeds, out, quiet);
    } catch (const ConfigError& e) {
        report_error(e.kind(), e.what());
        return 2;
    } catch (const UsageError& e) {
        report_error(e.kind(), e.what());
        return 2;
    } catch (const Error& e) {
        report_error(e.kind(), e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error("runtime_error", e.what());
        return 1;
    }
    return 0;
}
