// SPDX-License-Identifier: Apache-2.0
#include "hbgl/local_encoder.hpp"

#include "hbgl/errors.hpp"
#include "hbgl/global_embed.hpp"
#include "hbgl/special_tokens.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hbgl {

EmptyLevel parse_empty_level(std::string_view s) {
    if (s == "sep") return EmptyLevel::kSep;
    if (s == "zero") return EmptyLevel::kZero;
    throw ConfigError("empty level must be 'sep' or 'zero', got '" + std::string(s) + "'");
}

const char* to_string(EmptyLevel e) { return e == EmptyLevel::kSep ? "sep" : "zero"; }

int PackedLayout::level_of(std::size_t row) const {
    if (teacher_span().contains(row)) return static_cast<int>(row - teacher_span().begin) + 1;
    if (masked_span().contains(row)) return static_cast<int>(row - masked_span().begin) + 1;
    return 0;
}

int PackedLayout::position(std::size_t row) const {
    if (text_span().contains(row)) return static_cast<int>(row);
    return static_cast<int>(text_tokens) + 1 + level_of(row);
}

std::vector<int> PackedLayout::positions() const {
    std::vector<int> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = position(i);
    return out;
}

std::vector<int> PackedLayout::segments() const {
    std::vector<int> out(size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = segment(i);
    return out;
}

std::vector<std::size_t> PackedLayout::prediction_rows(int level) const {
    std::vector<std::size_t> rows;
    for (std::size_t i = text_span().begin; i < text_span().end; ++i) rows.push_back(i);
    for (int k = 1; k < level; ++k) rows.push_back(teacher_slot(k));
    rows.push_back(masked_slot(level));
    return rows;
}

AllowMatrix packed_allow(const PackedLayout& layout) {
    const std::size_t n = layout.size();
    const Span text = layout.text_span(), teacher = layout.teacher_span(), masked = layout.masked_span();
    AllowMatrix allow(n);
    for (std::size_t i = 0; i < n; ++i) {
        const int li = layout.level_of(i);
        for (std::size_t j = 0; j < n; ++j) {
            bool ok = text.contains(j);
            if (text.contains(i)) {
                // text sees text only
            } else if (teacher.contains(i)) {
                ok = ok || (teacher.contains(j) && layout.level_of(j) <= li);
            } else if (masked.contains(i)) {
                ok = ok || (teacher.contains(j) && layout.level_of(j) < li) || i == j;
            }
            allow.set(i, j, ok);
        }
    }
    return allow;
}

std::vector<int> truncate_text(std::span<const int> tokens, int depth, int max_positions) {
    const long budget = static_cast<long>(max_positions) - 2L * depth - 4;
    if (budget < 0)
        throw ConfigError("max_positions " + std::to_string(max_positions) + " cannot hold a depth-" +
                          std::to_string(depth) + " label part");
    const auto keep = std::min(tokens.size(), static_cast<std::size_t>(budget));
    return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(keep)};
}

namespace {

RowSource empty_source(EmptyLevel empty) {
    return empty == EmptyLevel::kSep ? RowSource::of_token(tokens::kSep) : RowSource::zero();
}

void push_text(InputSpec& spec, const PackedLayout& layout, std::span<const int> text) {
    spec.push(RowSource::of_token(tokens::kCls), 0, 0);
    for (std::size_t i = 0; i < text.size(); ++i) spec.push(RowSource::of_token(text[i]), layout.position(i + 1), 0);
    spec.push(RowSource::of_token(tokens::kSep), layout.position(text.size() + 1), 0);
}

InputSpec packed_spec(const PackedLayout& layout, std::span<const int> text, const std::vector<RowSource>& levels) {
    InputSpec spec;
    push_text(spec, layout, text);
    for (int k = 1; k <= layout.depth; ++k)
        spec.push(levels[static_cast<std::size_t>(k - 1)], layout.position(layout.teacher_slot(k)), 1);
    spec.push(RowSource::of_token(tokens::kSep), layout.position(layout.teacher_slot(layout.depth + 1)), 1);
    for (int k = 1; k <= layout.depth; ++k)
        spec.push(RowSource::of_token(tokens::kMask), layout.position(layout.masked_slot(k)), 1);
    spec.push(RowSource::of_token(tokens::kSep), layout.position(layout.masked_slot(layout.depth + 1)), 1);
    return spec;
}

InputSpec select(const InputSpec& full, std::span<const std::size_t> rows) {
    InputSpec out;
    for (std::size_t r : rows) out.push(full.sources[r], full.positions[r], full.segments[r]);
    return out;
}

template <class T>
T sigmoid(T z) {
    return T(1) / (T(1) + std::exp(-z));
}

double bce_logits(double z, double y) { return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z))); }

template <class T>
Matrix<T> masked_hidden(const Matrix<T>& hidden, const PackedLayout& layout) {
    return hidden.middleRows(static_cast<Eigen::Index>(layout.masked_span().begin), layout.depth);
}

void shuffle_order(std::vector<std::size_t>& order, std::mt19937_64& rng) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
}

template <class LossFn>
TrainReport run_epochs(std::vector<Parameter<float>*> params, const std::vector<Sample>& samples,
                       const LocalTrainConfig& cfg, LossFn&& loss_fn) {
    cfg.validate();
    TrainReport report;
    if (cfg.epochs == 0 || samples.empty()) return report;
    AdamOptimizer<float> adam;
    std::mt19937_64 order_rng(cfg.seed);
    std::mt19937_64 dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (auto* p : params) p->zero_grad();
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_order(order, order_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            double batch_loss = 0.0;
            for (std::size_t k = start; k < stop; ++k) {
                const Sample& s = samples[order[k]];
                const double loss = loss_fn(s, dropout_rng);
                if (!std::isfinite(loss)) {
                    for (auto* p : params) p->zero_grad();
                    throw NumericError("non-finite loss on sample '" + s.id + "'");
                }
                batch_loss += loss;
            }
            backward_and_step<float>(params, adam, batch_loss, cfg.learning_rate,
                                     "epoch " + std::to_string(epoch));
            epoch_loss += batch_loss;
            ++report.steps;
        }
        report.epoch_losses.push_back(epoch_loss);
    }
    return report;
}

}  // namespace

std::vector<RowSource> level_sources(const LocalHierarchy& lh, EmptyLevel empty) {
    std::vector<RowSource> out;
    out.reserve(lh.depth());
    for (const auto& level : lh.levels) out.push_back(level.empty() ? empty_source(empty) : RowSource::of_labels(level));
    return out;
}

template <class T>
Matrix<T> level_sequence(const LabelEmbeddingTable<T>& table, const LocalHierarchy& lh,
                         const TransformerEncoder<T>& enc, EmptyLevel empty) {
    const auto& w = table.weights().value;
    Matrix<T> rows = Matrix<T>::Zero(static_cast<Eigen::Index>(lh.depth()), enc.config().hidden_size);
    for (std::size_t k = 0; k < lh.depth(); ++k) {
        auto row = rows.row(static_cast<Eigen::Index>(k));
        if (!lh.levels[k].empty()) {
            for (LabelId id : lh.levels[k]) row += w.row(id);
        } else if (empty == EmptyLevel::kSep) {
            row = enc.token_embeddings().value.row(tokens::kSep);
        }
    }
    return rows;
}

template <class T>
PackedInput<T> pack_training_input(std::span<const int> text, const LocalHierarchy& lh,
                                   const LabelEmbeddingTable<T>& table, const TransformerEncoder<T>& enc,
                                   EmptyLevel empty) {
    PackedInput<T> out;
    out.layout = {text.size(), static_cast<int>(lh.depth())};
    const int max_pos = enc.config().max_positions;
    if (out.layout.size() > static_cast<std::size_t>(max_pos)) {
        throw ConfigError("packed length " + std::to_string(out.layout.size()) + " exceeds max_positions " +
                          std::to_string(max_pos) + "; truncate text to at most " +
                          std::to_string(std::max(0L, static_cast<long>(max_pos) - 2L * out.layout.depth - 4)) +
                          " tokens");
    }
    out.spec = packed_spec(out.layout, text, level_sources(lh, empty));
    out.rows = assemble_rows(out.spec, enc, table);
    out.allow = packed_allow(out.layout);
    return out;
}

template <class T>
double local_loss(const LabelHierarchy& h, std::span<const Matrix<T>> scores, std::span<const LabelSet> targets) {
    if (scores.size() != targets.size())
        throw ShapeError(std::to_string(scores.size()) + " score matrices for " + std::to_string(targets.size()) +
                         " target sets");
    double loss = 0.0;
    for (std::size_t n = 0; n < scores.size(); ++n) {
        const auto& s = scores[n];
        if (s.rows() != h.max_level() || s.cols() != static_cast<Eigen::Index>(h.size()))
            throw ShapeError("score matrix must be depth x labels");
        const auto& y = targets[n];
        for (int lvl = 1; lvl <= h.max_level(); ++lvl) {
            for (LabelId j : h.labels_at_level(lvl)) {
                const double v = std::clamp(static_cast<double>(s(lvl - 1, j)), kScoreClamp, 1.0 - kScoreClamp);
                const bool pos = std::binary_search(y.begin(), y.end(), j);
                loss -= pos ? std::log(v) : std::log(1.0 - v);
            }
        }
    }
    return loss;
}

template <class T>
std::vector<Parameter<T>*> LocalModel<T>::parameters() {
    auto out = encoder.parameters();
    out.push_back(&table.weights());
    return out;
}

template <class T>
double local_loss_and_grad(LocalModel<T>& model, std::span<const int> text, const LabelSet& labels,
                           std::mt19937_64* dropout_rng) {
    const auto& h = model.hierarchy;
    const std::vector<int> fitted = truncate_text(text, model.depth(), model.encoder.config().max_positions);
    const auto packed =
        pack_training_input<T>(fitted, local_hierarchy_of(h, labels), model.table, model.encoder, model.empty_level);

    ForwardCache<T> cache;
    const Matrix<T> hidden = model.encoder.forward(packed.rows, packed.allow, cache, dropout_rng);
    const Matrix<T> hm = masked_hidden(hidden, packed.layout);
    const auto& w = model.table.weights().value;
    const Matrix<T> logits = hm * w.transpose();

    double loss = 0.0;
    Matrix<T> dlogits = Matrix<T>::Zero(logits.rows(), logits.cols());
    for (int lvl = 1; lvl <= model.depth(); ++lvl) {
        for (LabelId j : h.labels_at_level(lvl)) {
            const T y = std::binary_search(labels.begin(), labels.end(), j) ? T(1) : T(0);
            const T z = logits(lvl - 1, j);
            loss += bce_logits(static_cast<double>(z), static_cast<double>(y));
            dlogits(lvl - 1, j) = sigmoid(z) - y;
        }
    }

    auto& table_param = model.table.weights();
    if (!table_param.frozen) table_param.grad.noalias() += dlogits.transpose() * hm;
    Matrix<T> dhidden = Matrix<T>::Zero(hidden.rows(), hidden.cols());
    dhidden.middleRows(static_cast<Eigen::Index>(packed.layout.masked_span().begin), model.depth()) = dlogits * w;
    const Matrix<T> drows = model.encoder.backward(cache, dhidden, true);
    assemble_rows_backward(packed.spec, drows, model.encoder, model.table);
    return loss;
}

template <class T>
Matrix<T> teacher_forced_scores(const LocalModel<T>& model, std::span<const int> text, const LabelSet& labels) {
    const std::vector<int> fitted = truncate_text(text, model.depth(), model.encoder.config().max_positions);
    const auto packed = pack_training_input<T>(fitted, local_hierarchy_of(model.hierarchy, labels), model.table,
                                               model.encoder, model.empty_level);
    const Matrix<T> hidden = model.encoder.forward(packed.rows, packed.allow);
    Matrix<T> logits = masked_hidden(hidden, packed.layout) * model.table.weights().value.transpose();
    return logits.unaryExpr([](T z) { return sigmoid(z); });
}

void LocalTrainConfig::validate() const {
    if (epochs < 0) throw ConfigError("local training: epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("local training: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("local training: learning_rate must be positive");
}

TrainReport train_local(LocalModel<float>& model, const std::vector<Sample>& samples, const LocalTrainConfig& cfg) {
    model.encoder.set_all_frozen(false);
    model.table.weights().frozen = false;
    return run_epochs(model.parameters(), samples, cfg, [&](const Sample& s, std::mt19937_64& rng) {
        return local_loss_and_grad(model, s.text, s.labels, &rng);
    });
}

namespace {

struct Decoder {
    const LocalModel<float>& model;
    PackedLayout layout;
    AllowMatrix allow;
    InputSpec full;
    double threshold;
    Prediction out;

    Decoder(const LocalModel<float>& m, std::span<const int> text, double thr)
        : model(m), threshold(thr) {
        const std::vector<int> fitted = truncate_text(text, m.depth(), m.encoder.config().max_positions);
        layout = {fitted.size(), m.depth()};
        allow = packed_allow(layout);
        const RowSource filler = empty_source(m.empty_level);
        full = packed_spec(layout, fitted, std::vector<RowSource>(static_cast<std::size_t>(m.depth()), filler));
        out.scores = MatrixF::Zero(m.depth(), static_cast<Eigen::Index>(m.hierarchy.size()));
    }

    // Scores level `lvl` from its masked-slot state and fills teacher slot lvl.
    void decide(int lvl, const RowVector<float>& state) {
        const auto& w = model.table.weights().value;
        out.scores.row(lvl - 1) = (state * w.transpose()).unaryExpr([](float z) { return sigmoid(z); });
        LabelSet chosen;
        for (LabelId j : model.hierarchy.labels_at_level(lvl))
            if (static_cast<double>(out.scores(lvl - 1, j)) > threshold) chosen.push_back(j);
        full.sources[layout.teacher_slot(lvl)] =
            chosen.empty() ? empty_source(model.empty_level) : RowSource::of_labels(chosen);
        out.labels.insert(out.labels.end(), chosen.begin(), chosen.end());
    }

    Prediction finish() {
        out.labels = normalize(std::move(out.labels));
        return std::move(out);
    }
};

}  // namespace

Prediction predict(const LocalModel<float>& model, std::span<const int> text, double threshold) {
    Decoder dec(model, text, threshold);
    for (int lvl = 1; lvl <= model.depth(); ++lvl) {
        const auto rows = dec.layout.prediction_rows(lvl);
        const MatrixF input = assemble_rows(select(dec.full, rows), model.encoder, model.table);
        const MatrixF hidden = model.encoder.forward(input, dec.allow.submatrix(rows));
        dec.decide(lvl, hidden.row(hidden.rows() - 1));
    }
    return dec.finish();
}

Prediction predict_cached(const LocalModel<float>& model, std::span<const int> text, double threshold) {
    Decoder dec(model, text, threshold);
    KvCache<float> kv;
    for (int lvl = 1; lvl <= model.depth(); ++lvl) {
        std::vector<std::size_t> rows;
        std::size_t keep = 0;
        if (lvl == 1) {
            for (std::size_t i = 0; i < dec.layout.text_span().end; ++i) rows.push_back(i);
            keep = rows.size();
        } else {
            rows.push_back(dec.layout.teacher_slot(lvl - 1));
            keep = 1;
        }
        rows.push_back(dec.layout.masked_slot(lvl));
        const MatrixF input = assemble_rows(select(dec.full, rows), model.encoder, model.table);
        const MatrixF hidden = model.encoder.forward_incremental(input, dec.allow.submatrix(rows), kv, keep);
        dec.decide(lvl, hidden.row(hidden.rows() - 1));
    }
    return dec.finish();
}

FlatModel::FlatModel(LabelHierarchy h, TransformerEncoder<float> enc, std::uint64_t seed)
    : hierarchy(std::move(h)),
      encoder(std::move(enc)),
      head_weight("flat_head.weight", "flat_head", static_cast<Eigen::Index>(hierarchy.size()),
                  encoder.config().hidden_size),
      head_bias("flat_head.bias", "flat_head", 1, static_cast<Eigen::Index>(hierarchy.size())) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.02);
    for (Eigen::Index i = 0; i < head_weight.value.size(); ++i)
        head_weight.value.data()[i] = static_cast<float>(gauss(rng));
}

std::vector<Parameter<float>*> FlatModel::parameters() {
    auto out = encoder.parameters();
    out.push_back(&head_weight);
    out.push_back(&head_bias);
    return out;
}

namespace {

InputSpec flat_spec(std::span<const int> text) {
    InputSpec spec;
    spec.push(RowSource::of_token(tokens::kCls), 0, 0);
    for (std::size_t i = 0; i < text.size(); ++i) spec.push(RowSource::of_token(text[i]), static_cast<int>(i + 1), 0);
    spec.push(RowSource::of_token(tokens::kSep), static_cast<int>(text.size() + 1), 0);
    return spec;
}

std::vector<int> flat_text(const FlatModel& m, std::span<const int> text) {
    const auto keep = std::min(text.size(), static_cast<std::size_t>(m.encoder.config().max_positions - 2));
    return {text.begin(), text.begin() + static_cast<std::ptrdiff_t>(keep)};
}

}  // namespace

double flat_loss_and_grad(FlatModel& model, std::span<const int> text, const LabelSet& labels,
                          std::mt19937_64* dropout_rng) {
    const InputSpec spec = flat_spec(flat_text(model, text));
    const LabelEmbeddingTable<float> no_labels;
    const MatrixF input = assemble_rows(spec, model.encoder, no_labels);
    const AllowMatrix allow = AllowMatrix::full(spec.size());
    ForwardCache<float> cache;
    const MatrixF hidden = model.encoder.forward(input, allow, cache, dropout_rng);
    const RowVector<float> cls = hidden.row(0);
    const RowVector<float> logits = cls * model.head_weight.value.transpose() + model.head_bias.value;

    double loss = 0.0;
    RowVector<float> dlogits(logits.cols());
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        const float y = std::binary_search(labels.begin(), labels.end(), static_cast<LabelId>(j)) ? 1.0f : 0.0f;
        loss += bce_logits(logits(j), y);
        dlogits(j) = sigmoid(logits(j)) - y;
    }
    model.head_weight.grad.noalias() += dlogits.transpose() * cls;
    model.head_bias.grad += dlogits;
    MatrixF dhidden = MatrixF::Zero(hidden.rows(), hidden.cols());
    dhidden.row(0) = dlogits * model.head_weight.value;
    const MatrixF drows = model.encoder.backward(cache, dhidden, true);
    std::vector<int> ids(spec.size());
    for (std::size_t i = 0; i < spec.size(); ++i) ids[i] = spec.sources[i].token;
    model.encoder.embed_backward(drows, ids, spec.positions, spec.segments);
    return loss;
}

TrainReport train_flat_baseline(FlatModel& model, const std::vector<Sample>& samples, const LocalTrainConfig& cfg) {
    model.encoder.set_all_frozen(false);
    return run_epochs(model.parameters(), samples, cfg, [&](const Sample& s, std::mt19937_64& rng) {
        return flat_loss_and_grad(model, s.text, s.labels, &rng);
    });
}

Prediction predict_flat(const FlatModel& model, std::span<const int> text, double threshold) {
    const InputSpec spec = flat_spec(flat_text(model, text));
    const LabelEmbeddingTable<float> no_labels;
    const MatrixF hidden =
        model.encoder.forward(assemble_rows(spec, model.encoder, no_labels), AllowMatrix::full(spec.size()));
    Prediction out;
    out.scores = (hidden.row(0) * model.head_weight.value.transpose() + model.head_bias.value)
                     .unaryExpr([](float z) { return sigmoid(z); });
    for (Eigen::Index j = 0; j < out.scores.cols(); ++j)
        if (static_cast<double>(out.scores(0, j)) > threshold) out.labels.push_back(static_cast<LabelId>(j));
    return out;
}

template struct LocalModel<float>;
template struct LocalModel<double>;
template MatrixF level_sequence<float>(const LabelEmbeddingTable<float>&, const LocalHierarchy&,
                                       const TransformerEncoder<float>&, EmptyLevel);
template MatrixD level_sequence<double>(const LabelEmbeddingTable<double>&, const LocalHierarchy&,
                                        const TransformerEncoder<double>&, EmptyLevel);
template PackedInput<float> pack_training_input<float>(std::span<const int>, const LocalHierarchy&,
                                                       const LabelEmbeddingTable<float>&,
                                                       const TransformerEncoder<float>&, EmptyLevel);
template PackedInput<double> pack_training_input<double>(std::span<const int>, const LocalHierarchy&,
                                                         const LabelEmbeddingTable<double>&,
                                                         const TransformerEncoder<double>&, EmptyLevel);
template double local_loss<float>(const LabelHierarchy&, std::span<const MatrixF>, std::span<const LabelSet>);
template double local_loss<double>(const LabelHierarchy&, std::span<const MatrixD>, std::span<const LabelSet>);
template double local_loss_and_grad<float>(LocalModel<float>&, std::span<const int>, const LabelSet&,
                                           std::mt19937_64*);
template double local_loss_and_grad<double>(LocalModel<double>&, std::span<const int>, const LabelSet&,
                                            std::mt19937_64*);
template MatrixF teacher_forced_scores<float>(const LocalModel<float>&, std::span<const int>, const LabelSet&);
template MatrixD teacher_forced_scores<double>(const LocalModel<double>&, std::span<const int>, const LabelSet&);

}  // namespace hbgl
