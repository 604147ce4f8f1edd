// SPDX-License-Identifier: Apache-2.0
#include "hbgl/pipeline.hpp"

#include "hbgl/checkpoint.hpp"
#include "hbgl/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace hbgl {

PreparedData prepare_data(const LabelHierarchy& h, const std::vector<RawSample>& train,
                          const std::vector<RawSample>& dev, const std::vector<RawSample>& test) {
    std::vector<std::string> texts;
    for (const auto& s : train) texts.push_back(s.text);
    for (std::size_t i = 0; i < h.size(); ++i) texts.push_back(h.name(static_cast<LabelId>(i)));
    Vocabulary vocab = Vocabulary::build(texts);
    PreparedData d{h, vocab, encode_samples(train, vocab, h), encode_samples(dev, vocab, h),
                   encode_samples(test, vocab, h)};
    require_valid(d.train, h);
    return d;
}

PreparedData prepare_data(const SyntheticSpec& spec) {
    const SyntheticDataset raw = generate_synthetic(spec);
    return prepare_data(load_taxonomy(raw.taxonomy_json), raw.train, raw.dev, raw.test);
}

std::vector<std::vector<int>> texts_of(const std::vector<Sample>& samples) {
    std::vector<std::vector<int>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.text);
    return out;
}

TransformerEncoder<float> pretrain_encoder(const RunConfig& cfg, const Vocabulary& vocab,
                                           const std::vector<Sample>& corpus, MlmReport* report) {
    EncoderConfig ec = cfg.encoder;
    ec.vocab_size = static_cast<int>(vocab.size());
    TransformerEncoder<float> enc(ec, cfg.mlm.seed);
    MlmConfig mc = cfg.mlm;
    mc.max_length = std::min(mc.max_length, ec.max_positions);
    MlmReport r = mc.steps > 0 ? pretrain_mlm(enc, texts_of(corpus), mc) : MlmReport{};
    if (report != nullptr) *report = std::move(r);
    return enc;
}

LabelEmbeddingTable<float> initial_label_table(const RunConfig& cfg, const PreparedData& data,
                                               const TransformerEncoder<float>& enc) {
    if (cfg.label_init == LabelInit::kLabelName) return init_from_names(data.hierarchy, enc, data.vocab, cfg.global.seed);
    return init_random(data.hierarchy.size(), enc.config().hidden_size, cfg.global.seed);
}

GlobalTrainReport run_global(const RunConfig& cfg, const PreparedData& data, const TransformerEncoder<float>& enc,
                             LabelEmbeddingTable<float>& table) {
    TransformerEncoder<float> frozen = enc;
    frozen.set_all_frozen(true);
    return train_global(data.hierarchy, frozen, table, cfg.global);
}

LocalModel<float> run_local(const RunConfig& cfg, const PreparedData& data, const TransformerEncoder<float>& enc,
                            const LabelEmbeddingTable<float>& table, TrainReport* report) {
    LocalModel<float> model{data.hierarchy, enc, table, cfg.empty_level};
    TrainReport r = train_local(model, data.train, cfg.local);
    if (report != nullptr) *report = std::move(r);
    return model;
}

FlatModel run_flat(const RunConfig& cfg, const PreparedData& data, const TransformerEncoder<float>& enc,
                   TrainReport* report) {
    FlatModel model(data.hierarchy, enc, cfg.local.seed);
    TrainReport r = train_flat_baseline(model, data.train, cfg.local);
    if (report != nullptr) *report = std::move(r);
    return model;
}

std::vector<LabelSet> predict_all(const LocalModel<float>& model, const std::vector<Sample>& samples,
                                  double threshold, bool cached) {
    std::vector<LabelSet> out;
    out.reserve(samples.size());
    for (const auto& s : samples)
        out.push_back((cached ? predict_cached(model, s.text, threshold) : predict(model, s.text, threshold)).labels);
    return out;
}

std::vector<LabelSet> predict_all(const FlatModel& model, const std::vector<Sample>& samples, double threshold) {
    std::vector<LabelSet> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(predict_flat(model, s.text, threshold).labels);
    return out;
}

std::vector<LabelSet> gold_of(const std::vector<Sample>& samples) {
    std::vector<LabelSet> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.labels);
    return out;
}

namespace {

Json train_json(const TrainReport& r) { return {{"steps", r.steps}, {"epoch_losses", r.epoch_losses}}; }

Json f1_json(const F1Report& r) {
    return {{"micro_f1", r.micro_f1}, {"macro_f1", r.macro_f1}, {"per_level_micro_f1", r.per_level_micro}};
}

}  // namespace

bool schedule_is_arithmetic(const GlobalTrainReport& r, const GlobalTrainConfig& cfg) {
    if (r.ratios.size() != static_cast<std::size_t>(cfg.steps)) return false;
    const double inc = (cfg.mask_ratio_max - cfg.mask_ratio_start) / static_cast<double>(cfg.steps);
    for (std::size_t t = 0; t < r.ratios.size(); ++t)
        if (std::abs(r.ratios[t] - (cfg.mask_ratio_start + static_cast<double>(t) * inc)) > 1e-12) return false;
    return true;
}

Json model_invariants(const LocalModel<float>& model, const std::vector<Sample>& samples, std::size_t max_samples) {
    const std::size_t n = std::min(max_samples, samples.size());
    bool cache_equal = true, monotone = true;
    double leak = 0.0;
    const LabelSet all = [&] {
        LabelSet a;
        for (std::size_t i = 0; i < model.hierarchy.size(); ++i) a.push_back(static_cast<LabelId>(i));
        return a;
    }();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& s = samples[i];
        const Prediction a = predict(model, s.text);
        const Prediction b = predict_cached(model, s.text);
        cache_equal = cache_equal && a.labels == b.labels;
        LabelSet prev = predict_cached(model, s.text, 0.3).labels;
        for (double t : {0.5, 0.7, 0.9}) {
            LabelSet cur = predict_cached(model, s.text, t).labels;
            monotone = monotone && std::includes(prev.begin(), prev.end(), cur.begin(), cur.end());
            prev = std::move(cur);
        }
        const std::vector<int> text = truncate_text(s.text, model.depth(), model.encoder.config().max_positions);
        const auto p1 = pack_training_input(text, local_hierarchy_of(model.hierarchy, s.labels), model.table,
                                            model.encoder, model.empty_level);
        const auto p2 = pack_training_input(text, local_hierarchy_of(model.hierarchy, all), model.table,
                                            model.encoder, model.empty_level);
        const auto m = static_cast<Eigen::Index>(p1.layout.text_span().end);
        const MatrixF h1 = model.encoder.forward(p1.rows, p1.allow).topRows(m);
        const MatrixF h2 = model.encoder.forward(p2.rows, p2.allow).topRows(m);
        leak = std::max(leak, static_cast<double>((h1 - h2).cwiseAbs().maxCoeff()));
    }
    Json j;
    j["samples"] = n;
    j["cache_agreement"] = {{"pass", cache_equal}};
    j["threshold_monotonicity"] = {{"pass", monotone}, {"thresholds", {0.3, 0.5, 0.7, 0.9}}};
    j["no_leakage"] = {{"pass", leak <= 1e-6}, {"max_abs_diff", leak}};
    return j;
}

ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentOptions& opts) {
    using Clock = std::chrono::steady_clock;
    auto log = [&](const std::string& m) {
        if (opts.log) opts.log(m);
    };
    auto seconds_since = [](Clock::time_point t) {
        return std::chrono::duration<double>(Clock::now() - t).count();
    };
    ExperimentResult res;
    Json& man = res.manifest;
    man["version"] = version_string();
    man["config"] = to_json(cfg);

    auto t0 = Clock::now();
    const PreparedData data = prepare_data(cfg.data);
    man["data"] = {{"labels", data.hierarchy.size()},
                   {"depth", data.hierarchy.max_level()},
                   {"vocab_size", data.vocab.size()},
                   {"train", data.train.size()},
                   {"dev", data.dev.size()},
                   {"test", data.test.size()}};
    log("data ready: " + std::to_string(data.train.size()) + " train samples");

    MlmReport mlm;
    const TransformerEncoder<float> enc = pretrain_encoder(cfg, data.vocab, data.train, &mlm);
    res.mlm_final_loss = mlm.losses.empty() ? 0.0 : mlm.losses.back();
    man["mlm"] = {{"steps", mlm.losses.size()}, {"final_loss", res.mlm_final_loss}};
    res.timings["mlm"] = seconds_since(t0);
    log("mlm done");

    auto t1 = Clock::now();
    LabelEmbeddingTable<float> table = initial_label_table(cfg, data, enc);
    const std::uint64_t recovery_seed = cfg.global.seed + 17;
    res.recovery_untrained =
        masked_label_recovery(data.hierarchy, enc, table, cfg.recovery_ratio, 100, recovery_seed);
    const std::string digest_before = encoder_digest(enc);
    const GlobalTrainReport gr = run_global(cfg, data, enc, table);
    if (opts.check_invariants) {
        res.invariants["frozen_encoder"] = {{"pass", encoder_digest(enc) == digest_before}, {"sha256", digest_before}};
        res.invariants["schedule"] = {{"pass", schedule_is_arithmetic(gr, cfg.global)}, {"steps", gr.ratios.size()}};
    }
    res.recovery_trained = masked_label_recovery(data.hierarchy, enc, table, cfg.recovery_ratio, 100, recovery_seed);
    man["global"] = {{"steps", gr.ratios.size()},
                     {"increment", gr.increment},
                     {"ratio_first", gr.ratios.empty() ? 0.0 : gr.ratios.front()},
                     {"ratio_last", gr.ratios.empty() ? 0.0 : gr.ratios.back()},
                     {"final_loss", gr.losses.empty() ? 0.0 : gr.losses.back()},
                     {"recovery_untrained", res.recovery_untrained.rate()},
                     {"recovery_trained", res.recovery_trained.rate()}};
    res.timings["global"] = seconds_since(t1);
    log("global done, recovery " + std::to_string(res.recovery_trained.rate()));

    auto t2 = Clock::now();
    TrainReport lr;
    const LocalModel<float> model = run_local(cfg, data, enc, table, &lr);
    res.local_test = f1_report(predict_all(model, data.test, cfg.threshold), gold_of(data.test), data.hierarchy,
                               opts.macro);
    man["local"] = train_json(lr);
    res.timings["local"] = seconds_since(t2);
    man["local"]["test"] = f1_json(res.local_test);
    if (opts.check_invariants) {
        const Json inv = model_invariants(model, data.test, data.test.size());
        for (auto it = inv.begin(); it != inv.end(); ++it) res.invariants[it.key()] = it.value();
        LocalModel<float> alias = model;
        alias.table.weights().value(0, 0) += 1.0f;
        res.invariants["weight_tying"] = {{"pass", alias.classifier().value(0, 0) == alias.table.weights().value(0, 0) &&
                                                       &alias.classifier() == &alias.table.weights()}};
    }
    log("local done, macro " + std::to_string(res.local_test.macro_f1));

    if (opts.flat_baseline) {
        auto t3 = Clock::now();
        TrainReport fr;
        const FlatModel flat = run_flat(cfg, data, enc, &fr);
        res.flat_test =
            f1_report(predict_all(flat, data.test, cfg.threshold), gold_of(data.test), data.hierarchy, opts.macro);
        man["flat"] = train_json(fr);
        res.timings["flat"] = seconds_since(t3);
        man["flat"]["test"] = f1_json(*res.flat_test);
        log("flat done, macro " + std::to_string(res.flat_test->macro_f1));
    }

    if (opts.random_init_arm) {
        auto t4 = Clock::now();
        RunConfig rc = cfg;
        rc.label_init = LabelInit::kRandom;
        const LabelEmbeddingTable<float> random_table = initial_label_table(rc, data, enc);
        const LocalModel<float> rmodel = run_local(rc, data, enc, random_table);
        res.random_init_test = f1_report(predict_all(rmodel, data.test, cfg.threshold), gold_of(data.test),
                                         data.hierarchy, opts.macro);
        man["random_init"] = {{"test", f1_json(*res.random_init_test)}};
        res.timings["random_init"] = seconds_since(t4);
        log("random-init done, macro " + std::to_string(res.random_init_test->macro_f1));
    }
    res.timings["total"] = seconds_since(t0);
    return res;
}

}  // namespace hbgl
