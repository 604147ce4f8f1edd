// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/allow_matrix.hpp"
#include "hbgl/data.hpp"
#include "hbgl/encoder.hpp"
#include "hbgl/hierarchy.hpp"
#include "hbgl/label_table.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

namespace hbgl {

/// Content of a label slot whose level has no labels.
enum class EmptyLevel { kSep, kZero };

EmptyLevel parse_empty_level(std::string_view s);
const char* to_string(EmptyLevel e);

/// Index arithmetic for the packed sequence
///
///   [CLS] t1..tm [SEP] | u1..uD [SEP] | m1..mD [SEP]
///
/// Levels are 1-based; level D+1 names the trailing [SEP] of a label part.
struct PackedLayout {
    std::size_t text_tokens = 0;  // m
    int depth = 0;                // D

    std::size_t size() const { return text_tokens + 2 * static_cast<std::size_t>(depth) + 4; }
    Span text_span() const { return {0, text_tokens + 2}; }
    Span teacher_span() const { return {text_tokens + 2, text_tokens + 3 + static_cast<std::size_t>(depth)}; }
    Span masked_span() const { return {teacher_span().end, size()}; }

    std::size_t teacher_slot(int level) const { return teacher_span().begin + static_cast<std::size_t>(level - 1); }
    std::size_t masked_slot(int level) const { return masked_span().begin + static_cast<std::size_t>(level - 1); }
    /// Level of a label-part row, 0 for text rows.
    int level_of(std::size_t row) const;

    int position(std::size_t row) const;
    int segment(std::size_t row) const { return row < text_span().end ? 0 : 1; }
    std::vector<int> positions() const;
    std::vector<int> segments() const;

    /// Rows fed to the level-h prediction step: text, teacher slots < h and
    /// masked slot h.
    std::vector<std::size_t> prediction_rows(int level) const;
};

/// Attention rules of the packed sequence.
AllowMatrix packed_allow(const PackedLayout& layout);

/// Longest text prefix that fits `max_positions` next to a depth-D label part.
std::vector<int> truncate_text(std::span<const int> tokens, int depth, int max_positions);

/// Per-level slot contents: the sum of the level's labels, or the
/// empty-level filler.
std::vector<RowSource> level_sources(const LocalHierarchy& lh, EmptyLevel empty);

/// u_h content rows (D x d), before position and segment embeddings.
template <class T>
Matrix<T> level_sequence(const LabelEmbeddingTable<T>& table, const LocalHierarchy& lh,
                         const TransformerEncoder<T>& enc, EmptyLevel empty = EmptyLevel::kSep);

template <class T>
struct PackedInput {
    PackedLayout layout;
    InputSpec spec;
    Matrix<T> rows;
    AllowMatrix allow;
};

/// Teacher-forced packed input. Throws ConfigError when the packed length
/// exceeds max_positions.
template <class T>
PackedInput<T> pack_training_input(std::span<const int> text, const LocalHierarchy& lh,
                                   const LabelEmbeddingTable<T>& table, const TransformerEncoder<T>& enc,
                                   EmptyLevel empty = EmptyLevel::kSep);

/// Summed clamped BCE over the level-h columns of each sample's D x L
/// score matrix.
template <class T>
double local_loss(const LabelHierarchy& h, std::span<const Matrix<T>> scores, std::span<const LabelSet> targets);

/// Encoder, label table and hierarchy. The classifier projection is the
/// label table itself.
template <class T>
struct LocalModel {
    LabelHierarchy hierarchy;
    TransformerEncoder<T> encoder;
    LabelEmbeddingTable<T> table;
    EmptyLevel empty_level = EmptyLevel::kSep;

    int depth() const { return hierarchy.max_level(); }
    Parameter<T>& classifier() { return table.weights(); }
    const Parameter<T>& classifier() const { return table.weights(); }
    std::vector<Parameter<T>*> parameters();
};

/// One teacher-forced forward/backward. Adds gradients into every unfrozen
/// encoder parameter and the label table and returns the summed loss.
/// Dropout is applied iff `dropout_rng` is non-null.
template <class T>
double local_loss_and_grad(LocalModel<T>& model, std::span<const int> text, const LabelSet& labels,
                           std::mt19937_64* dropout_rng = nullptr);

/// Teacher-forced D x L scores (dropout off).
template <class T>
Matrix<T> teacher_forced_scores(const LocalModel<T>& model, std::span<const int> text, const LabelSet& labels);

struct LocalTrainConfig {
    int epochs = 3;
    int batch_size = 12;
    double learning_rate = 3e-5;
    std::uint64_t seed = 0;

    void validate() const;
};

struct TrainReport {
    std::vector<double> epoch_losses;
    long steps = 0;
};

/// Adam over the encoder and the label table jointly.
TrainReport train_local(LocalModel<float>& model, const std::vector<Sample>& samples, const LocalTrainConfig& cfg);

struct Prediction {
    LabelSet labels;
    MatrixF scores;  // D x L; row h-1 is read at level-h columns only
};

/// Level-by-level decoding, one full forward per level.
Prediction predict(const LocalModel<float>& model, std::span<const int> text, double threshold = 0.5);
/// Same decoding, reusing keys and values of text and decoded slots.
Prediction predict_cached(const LocalModel<float>& model, std::span<const int> text, double threshold = 0.5);

/// Flat multi-label baseline: [CLS] state -> L sigmoid outputs.
struct FlatModel {
    LabelHierarchy hierarchy;
    TransformerEncoder<float> encoder;
    Parameter<float> head_weight;  // L x d
    Parameter<float> head_bias;    // 1 x L

    FlatModel(LabelHierarchy h, TransformerEncoder<float> enc, std::uint64_t seed);
    std::vector<Parameter<float>*> parameters();
};

double flat_loss_and_grad(FlatModel& model, std::span<const int> text, const LabelSet& labels,
                          std::mt19937_64* dropout_rng = nullptr);
TrainReport train_flat_baseline(FlatModel& model, const std::vector<Sample>& samples, const LocalTrainConfig& cfg);
Prediction predict_flat(const FlatModel& model, std::span<const int> text, double threshold = 0.5);

}  // namespace hbgl
