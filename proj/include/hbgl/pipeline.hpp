// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/config.hpp"
#include "hbgl/data.hpp"
#include "hbgl/encoder.hpp"
#include "hbgl/global_embed.hpp"
#include "hbgl/local_encoder.hpp"
#include "hbgl/metrics.hpp"

#include <functional>
#include <string>
#include <vector>

namespace hbgl {

struct PreparedData {
    LabelHierarchy hierarchy;
    Vocabulary vocab;
    std::vector<Sample> train, dev, test;
};

/// Generates the synthetic corpus, builds the vocabulary from training
/// texts and label names, and encodes all splits.
PreparedData prepare_data(const SyntheticSpec& spec);
PreparedData prepare_data(const LabelHierarchy& h, const std::vector<RawSample>& train,
                          const std::vector<RawSample>& dev, const std::vector<RawSample>& test);

std::vector<std::vector<int>> texts_of(const std::vector<Sample>& samples);

/// Fresh encoder sized for `vocab`, then masked-token pretraining.
TransformerEncoder<float> pretrain_encoder(const RunConfig& cfg, const Vocabulary& vocab,
                                           const std::vector<Sample>& corpus, MlmReport* report = nullptr);

LabelEmbeddingTable<float> initial_label_table(const RunConfig& cfg, const PreparedData& data,
                                               const TransformerEncoder<float>& enc);

/// Freezes a copy of the encoder and trains the table against it.
GlobalTrainReport run_global(const RunConfig& cfg, const PreparedData& data, const TransformerEncoder<float>& enc,
                             LabelEmbeddingTable<float>& table);

LocalModel<float> run_local(const RunConfig& cfg, const PreparedData& data, const TransformerEncoder<float>& enc,
                            const LabelEmbeddingTable<float>& table, TrainReport* report = nullptr);
FlatModel run_flat(const RunConfig& cfg, const PreparedData& data, const TransformerEncoder<float>& enc,
                   TrainReport* report = nullptr);

std::vector<LabelSet> predict_all(const LocalModel<float>& model, const std::vector<Sample>& samples,
                                  double threshold, bool cached = true);
std::vector<LabelSet> predict_all(const FlatModel& model, const std::vector<Sample>& samples, double threshold);
std::vector<LabelSet> gold_of(const std::vector<Sample>& samples);

struct ExperimentOptions {
    bool flat_baseline = true;
    bool random_init_arm = true;
    /// Adds run-time invariant checks to the result.
    bool check_invariants = false;
    MacroMode macro = MacroMode::kAllLabels;
    std::function<void(const std::string&)> log;
};

struct ExperimentResult {
    double mlm_final_loss = 0.0;
    RecoveryResult recovery_untrained, recovery_trained;
    F1Report local_test;
    std::optional<F1Report> flat_test;
    std::optional<F1Report> random_init_test;
    Json invariants = Json::object();  // name -> {"pass": bool, ...}
    Json manifest;  // deterministic given config and seed
    Json timings;   // wall-clock seconds per stage
};

/// Checks on a trained model that need no reference implementation:
/// text rows ignore label slots, cached and uncached decoding agree, and
/// raising the threshold never adds labels.
Json model_invariants(const LocalModel<float>& model, const std::vector<Sample>& samples, std::size_t max_samples);

/// Schedule arithmetic of a global training report, exact to 1e-12.
bool schedule_is_arithmetic(const GlobalTrainReport& r, const GlobalTrainConfig& cfg);

/// One seed of the full pipeline on the configured synthetic data.
ExperimentResult run_experiment(const RunConfig& cfg, const ExperimentOptions& opts = {});

}  // namespace hbgl
