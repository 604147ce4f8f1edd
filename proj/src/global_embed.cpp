// SPDX-License-Identifier: Apache-2.0
#include "hbgl/global_embed.hpp"

#include "hbgl/errors.hpp"
#include "hbgl/special_tokens.hpp"

#include <algorithm>
#include <cmath>

namespace hbgl {

void GlobalTrainConfig::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("global training config: " + m); };
    if (!(mask_ratio_start >= 0.0 && mask_ratio_start <= mask_ratio_max && mask_ratio_max < 1.0))
        fail("mask ratios must satisfy 0 <= start <= max < 1");
    if (steps < 0) fail("steps must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
}

double GlobalTrainConfig::ratio_increment() const {
    return steps == 0 ? 0.0 : (mask_ratio_max - mask_ratio_start) / static_cast<double>(steps);
}

LabelEmbeddingTable<float> init_from_names(const LabelHierarchy& h, const TransformerEncoder<float>& enc,
                                           const Vocabulary& vocab, std::uint64_t seed) {
    const int d = enc.config().hidden_size;
    LabelEmbeddingTable<float> table(h.size(), d);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.02);
    const auto& tokens = enc.token_embeddings().value;
    for (std::size_t i = 0; i < h.size(); ++i) {
        auto row = table.weights().value.row(static_cast<Eigen::Index>(i));
        std::vector<int> ids;
        for (int t : tokenize(h.name(static_cast<LabelId>(i)), vocab))
            if (t != tokens::kUnk && t < enc.config().vocab_size) ids.push_back(t);
        if (ids.empty()) {
            for (int k = 0; k < d; ++k) row(k) = static_cast<float>(gauss(rng));
            continue;
        }
        row.setZero();
        for (int t : ids) row += tokens.row(t);
        row /= static_cast<float>(ids.size());
    }
    return table;
}

LabelEmbeddingTable<float> init_random(std::size_t labels, int dim, std::uint64_t seed) {
    LabelEmbeddingTable<float> table(labels, dim);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 0.02);
    auto& w = table.weights().value;
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<float>(gauss(rng));
    return table;
}

AllowMatrix global_attention_mask(const LabelHierarchy& h) {
    AllowMatrix allow = AllowMatrix::identity(h.size());
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto id = static_cast<LabelId>(i);
        for (LabelId p : h.parents(id)) allow.set(i, static_cast<std::size_t>(p), true);
        for (LabelId c : h.children(id)) allow.set(i, static_cast<std::size_t>(c), true);
    }
    return allow;
}

InputSpec global_input_spec(const LabelHierarchy& h, const LabelSet& masked) {
    InputSpec spec;
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto id = static_cast<LabelId>(i);
        const bool is_masked = std::binary_search(masked.begin(), masked.end(), id);
        spec.push(is_masked ? RowSource::of_token(tokens::kMask) : RowSource::of_labels({id}), h.level(id), 1);
    }
    return spec;
}

template <class T>
Matrix<T> build_global_inputs(const LabelHierarchy& h, const LabelEmbeddingTable<T>& table,
                              const TransformerEncoder<T>& enc, const LabelSet& masked) {
    if (table.size() != h.size())
        throw ShapeError("label table has " + std::to_string(table.size()) + " rows, hierarchy has " +
                         std::to_string(h.size()) + " labels");
    if (h.max_level() >= enc.config().max_positions)
        throw ConfigError("hierarchy depth " + std::to_string(h.max_level()) + " needs max_positions > " +
                          std::to_string(h.max_level()));
    return assemble_rows(global_input_spec(h, masked), enc, table);
}

LabelSet sample_mask(const LabelHierarchy& h, double ratio, std::mt19937_64& rng) {
    const std::size_t n = h.size();
    // The small slack keeps exact products (0.2 * 40) from rounding up.
    auto count = static_cast<std::size_t>(std::max(0.0, std::ceil(ratio * static_cast<double>(n) - 1e-9)));
    count = std::min(count, n);
    std::vector<LabelId> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<LabelId>(i);
    for (std::size_t k = 0; k < count; ++k) std::swap(ids[k], ids[k + static_cast<std::size_t>(rng() % (n - k))]);
    ids.resize(count);
    return normalize(std::move(ids));
}

template <class T>
Matrix<T> mask_targets(const LabelHierarchy& h, const LabelSet& masked) {
    Matrix<T> y = Matrix<T>::Zero(static_cast<Eigen::Index>(masked.size()), static_cast<Eigen::Index>(h.size()));
    for (std::size_t r = 0; r < masked.size(); ++r) {
        const LabelId i = masked[r];
        y(static_cast<Eigen::Index>(r), i) = T(1);
        for (LabelId j : masked)
            if (sibling_leaves(h, i, j)) y(static_cast<Eigen::Index>(r), j) = T(1);
    }
    return y;
}

template <class T>
double global_loss(const Matrix<T>& scores, const Matrix<T>& targets) {
    if (scores.rows() != targets.rows() || scores.cols() != targets.cols())
        throw ShapeError("scores are " + std::to_string(scores.rows()) + "x" + std::to_string(scores.cols()) +
                         ", targets are " + std::to_string(targets.rows()) + "x" +
                         std::to_string(targets.cols()));
    double loss = 0.0;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        for (Eigen::Index j = 0; j < scores.cols(); ++j) {
            const double s = std::clamp(static_cast<double>(scores(i, j)), kScoreClamp, 1.0 - kScoreClamp);
            const double y = static_cast<double>(targets(i, j));
            loss -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
        }
    }
    return loss;
}

namespace {

template <class T>
double bce_with_logits(T z, T y) {
    const double zd = static_cast<double>(z);
    return std::max(zd, 0.0) - zd * static_cast<double>(y) + std::log1p(std::exp(-std::abs(zd)));
}

template <class T>
T sigmoid(T z) {
    return T(1) / (T(1) + std::exp(-z));
}

template <class T>
Matrix<T> gather_rows(const Matrix<T>& m, const LabelSet& rows) {
    Matrix<T> out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
    return out;
}

template <class T>
double loss_and_grad_with_mask(const LabelHierarchy& h, const TransformerEncoder<T>& enc,
                               LabelEmbeddingTable<T>& table, const LabelSet& masked, const AllowMatrix& allow) {
    if (masked.empty()) return 0.0;
    const Matrix<T> rows = build_global_inputs(h, table, enc, masked);
    ForwardCache<T> cache;
    const Matrix<T> hidden = enc.forward(rows, allow, cache, nullptr);
    const Matrix<T> hm = gather_rows(hidden, masked);
    const auto& w = table.weights().value;
    const Matrix<T> logits = hm * w.transpose();
    const Matrix<T> y = mask_targets<T>(h, masked);

    double loss = 0.0;
    Matrix<T> dlogits(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            loss += bce_with_logits(logits(i, j), y(i, j));
            dlogits(i, j) = sigmoid(logits(i, j)) - y(i, j);
        }
    }

    auto& grad = table.weights().grad;
    grad.noalias() += dlogits.transpose() * hm;
    const Matrix<T> dhm = dlogits * w;
    Matrix<T> dhidden = Matrix<T>::Zero(hidden.rows(), hidden.cols());
    for (std::size_t k = 0; k < masked.size(); ++k) dhidden.row(masked[k]) = dhm.row(static_cast<Eigen::Index>(k));
    const Matrix<T> drows = enc.input_gradient(cache, dhidden);
    for (std::size_t i = 0; i < h.size(); ++i) {
        const auto id = static_cast<LabelId>(i);
        if (!std::binary_search(masked.begin(), masked.end(), id))
            grad.row(id) += drows.row(static_cast<Eigen::Index>(i));
    }
    return loss;
}

}  // namespace

template <class T>
double global_loss_and_grad(const LabelHierarchy& h, const TransformerEncoder<T>& enc,
                            LabelEmbeddingTable<T>& table, const LabelSet& masked) {
    return loss_and_grad_with_mask(h, enc, table, masked, global_attention_mask(h));
}

template <class T>
Matrix<T> global_scores(const LabelHierarchy& h, const TransformerEncoder<T>& enc,
                        const LabelEmbeddingTable<T>& table, const LabelSet& masked) {
    const Matrix<T> hidden = enc.forward(build_global_inputs(h, table, enc, masked), global_attention_mask(h));
    Matrix<T> logits = gather_rows(hidden, masked) * table.weights().value.transpose();
    return logits.unaryExpr([](T z) { return sigmoid(z); });
}

GlobalTrainReport train_global(const LabelHierarchy& h, const TransformerEncoder<float>& enc,
                               LabelEmbeddingTable<float>& table, const GlobalTrainConfig& cfg) {
    cfg.validate();
    if (table.size() != h.size())
        throw ShapeError("label table has " + std::to_string(table.size()) + " rows, hierarchy has " +
                         std::to_string(h.size()) + " labels");
    GlobalTrainReport report;
    report.increment = cfg.ratio_increment();
    const AllowMatrix allow = global_attention_mask(h);
    std::mt19937_64 rng(cfg.seed);
    SgdOptimizer<float> sgd;
    std::vector<Parameter<float>*> params{&table.weights()};
    table.weights().zero_grad();

    double ratio = cfg.mask_ratio_start;
    for (int step = 0; step < cfg.steps; ++step) {
        report.ratios.push_back(ratio);
        double loss = 0.0;
        for (int b = 0; b < cfg.batch_size; ++b)
            loss += loss_and_grad_with_mask(h, enc, table, sample_mask(h, ratio, rng), allow);
        report.losses.push_back(loss);
        backward_and_step<float>(params, sgd, loss, cfg.learning_rate, "train_global step " + std::to_string(step));
        ratio += report.increment;
    }
    return report;
}

RecoveryResult masked_label_recovery(const LabelHierarchy& h, const TransformerEncoder<float>& enc,
                                     const LabelEmbeddingTable<float>& table, double ratio, int trials,
                                     std::uint64_t seed) {
    RecoveryResult result;
    std::mt19937_64 rng(seed);
    for (int t = 0; t < trials; ++t) {
        const LabelSet masked = sample_mask(h, ratio, rng);
        if (masked.empty()) continue;
        const MatrixF scores = global_scores(h, enc, table, masked);
        for (std::size_t r = 0; r < masked.size(); ++r) {
            const LabelId b = masked[r];
            const float own = scores(static_cast<Eigen::Index>(r), b);
            bool best = true;
            for (std::size_t j = 0; j < h.size() && best; ++j) {
                const auto jid = static_cast<LabelId>(j);
                if (jid == b) continue;
                if (std::binary_search(masked.begin(), masked.end(), jid) && sibling_leaves(h, b, jid)) continue;
                if (scores(static_cast<Eigen::Index>(r), jid) >= own) best = false;
            }
            result.recovered += best;
            ++result.total;
        }
    }
    return result;
}

template MatrixF build_global_inputs<float>(const LabelHierarchy&, const LabelEmbeddingTable<float>&,
                                            const TransformerEncoder<float>&, const LabelSet&);
template MatrixD build_global_inputs<double>(const LabelHierarchy&, const LabelEmbeddingTable<double>&,
                                             const TransformerEncoder<double>&, const LabelSet&);
template MatrixF mask_targets<float>(const LabelHierarchy&, const LabelSet&);
template MatrixD mask_targets<double>(const LabelHierarchy&, const LabelSet&);
template double global_loss<float>(const MatrixF&, const MatrixF&);
template double global_loss<double>(const MatrixD&, const MatrixD&);
template double global_loss_and_grad<float>(const LabelHierarchy&, const TransformerEncoder<float>&,
                                            LabelEmbeddingTable<float>&, const LabelSet&);
template double global_loss_and_grad<double>(const LabelHierarchy&, const TransformerEncoder<double>&,
                                             LabelEmbeddingTable<double>&, const LabelSet&);
template MatrixF global_scores<float>(const LabelHierarchy&, const TransformerEncoder<float>&,
                                      const LabelEmbeddingTable<float>&, const LabelSet&);
template MatrixD global_scores<double>(const LabelHierarchy&, const TransformerEncoder<double>&,
                                       const LabelEmbeddingTable<double>&, const LabelSet&);

}  // namespace hbgl
