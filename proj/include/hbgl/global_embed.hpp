// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/allow_matrix.hpp"
#include "hbgl/data.hpp"
#include "hbgl/encoder.hpp"
#include "hbgl/hierarchy.hpp"
#include "hbgl/label_table.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace hbgl {

/// Float32 machine epsilon; scores are clamped to [eps, 1 - eps] before logs.
inline constexpr double kScoreClamp = 1.1920929e-7;

struct GlobalTrainConfig {
    double mask_ratio_start = 0.15;
    double mask_ratio_max = 0.45;
    int steps = 300;
    int batch_size = 16;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
    /// Constant per-step ratio increment (r_max - r_start) / steps.
    double ratio_increment() const;
};

enum class LabelInit { kLabelName, kRandom };

/// Row i = mean token embedding of the in-vocabulary tokens of label i's
/// name. Names without known tokens get a seeded N(0, 0.02^2) row.
LabelEmbeddingTable<float> init_from_names(const LabelHierarchy& h, const TransformerEncoder<float>& enc,
                                           const Vocabulary& vocab, std::uint64_t seed);
LabelEmbeddingTable<float> init_random(std::size_t labels, int dim, std::uint64_t seed);

/// allow(i, j) iff i == j or j is a parent or child of i.
AllowMatrix global_attention_mask(const LabelHierarchy& h);

/// Input recipe for the label sequence: label (or [MASK] if masked) +
/// segment 1 + position level(i).
InputSpec global_input_spec(const LabelHierarchy& h, const LabelSet& masked);

template <class T>
Matrix<T> build_global_inputs(const LabelHierarchy& h, const LabelEmbeddingTable<T>& table,
                              const TransformerEncoder<T>& enc, const LabelSet& masked = {});

/// ceil(ratio * L) distinct labels drawn uniformly.
LabelSet sample_mask(const LabelHierarchy& h, double ratio, std::mt19937_64& rng);

/// Targets over masked rows x L: 1 at the label itself and at co-masked
/// sibling leaves.
template <class T>
Matrix<T> mask_targets(const LabelHierarchy& h, const LabelSet& masked);

/// Summed binary cross-entropy over probability scores (clamped).
template <class T>
double global_loss(const Matrix<T>& scores, const Matrix<T>& targets);

/// One masked forward/backward. Returns the summed loss (computed from
/// logits) and adds d loss / d table into table.weights().grad. The encoder
/// is only read.
template <class T>
double global_loss_and_grad(const LabelHierarchy& h, const TransformerEncoder<T>& enc,
                            LabelEmbeddingTable<T>& table, const LabelSet& masked);

/// Scores sigmoid(h * table^T) for the masked rows, without gradients.
template <class T>
Matrix<T> global_scores(const LabelHierarchy& h, const TransformerEncoder<T>& enc,
                        const LabelEmbeddingTable<T>& table, const LabelSet& masked);

struct GlobalTrainReport {
    std::vector<double> ratios;  // ratio in effect for each step
    std::vector<double> losses;  // summed loss over the step's batch
    double increment = 0.0;
};

/// Masked-label training of the label table against a read-only encoder.
GlobalTrainReport train_global(const LabelHierarchy& h, const TransformerEncoder<float>& enc,
                               LabelEmbeddingTable<float>& table, const GlobalTrainConfig& cfg);

struct RecoveryResult {
    long recovered = 0;
    long total = 0;
    double rate() const { return total == 0 ? 0.0 : static_cast<double>(recovered) / static_cast<double>(total); }
};

/// Fraction of masked labels b whose own score s_bb beats every s_bj except
/// co-masked sibling leaves, over `trials` fresh maskings at `ratio`.
RecoveryResult masked_label_recovery(const LabelHierarchy& h, const TransformerEncoder<float>& enc,
                                     const LabelEmbeddingTable<float>& table, double ratio, int trials,
                                     std::uint64_t seed);

}  // namespace hbgl
