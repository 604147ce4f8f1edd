// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/encoder.hpp"
#include "hbgl/hierarchy.hpp"
#include "hbgl/tensor.hpp"

#include <cstdint>
#include <vector>

namespace hbgl {

/// The L x d label embedding matrix. One storage serves as input rows and as
/// the classification projection (scores = sigmoid(h * table^T)).
template <class T>
class LabelEmbeddingTable {
public:
    LabelEmbeddingTable() = default;
    LabelEmbeddingTable(std::size_t labels, int dim)
        : weights_("label_embeddings", "label_embeddings", static_cast<Eigen::Index>(labels), dim) {}

    Parameter<T>& weights() { return weights_; }
    const Parameter<T>& weights() const { return weights_; }
    std::size_t size() const { return static_cast<std::size_t>(weights_.value.rows()); }
    int dim() const { return static_cast<int>(weights_.value.cols()); }

    template <class U>
    LabelEmbeddingTable<U> cast() const {
        LabelEmbeddingTable<U> out(size(), dim());
        out.weights().value = weights_.value.template cast<U>();
        out.weights().frozen = weights_.frozen;
        return out;
    }

private:
    Parameter<T> weights_;
};

/// Where the content of one encoder input row comes from, before the
/// position and segment embeddings are added.
struct RowSource {
    enum class Kind { kToken, kLabelSum, kZero };
    Kind kind = Kind::kZero;
    int token = -1;
    LabelSet labels;

    static RowSource of_token(int id) { return {Kind::kToken, id, {}}; }
    static RowSource of_labels(LabelSet ids) { return {Kind::kLabelSum, -1, std::move(ids)}; }
    static RowSource zero() { return {}; }
};

/// Row-by-row recipe for an encoder input sequence.
struct InputSpec {
    std::vector<RowSource> sources;
    std::vector<int> positions;
    std::vector<int> segments;

    std::size_t size() const { return sources.size(); }
    void push(RowSource src, int position, int segment) {
        sources.push_back(std::move(src));
        positions.push_back(position);
        segments.push_back(segment);
    }
};

/// Builds input rows: content + segment embedding + position embedding.
template <class T>
Matrix<T> assemble_rows(const InputSpec& spec, const TransformerEncoder<T>& enc,
                        const LabelEmbeddingTable<T>& table);

/// Scatters row gradients back into the token/position/segment tables and
/// the label table (frozen tensors are skipped).
template <class T>
void assemble_rows_backward(const InputSpec& spec, const Matrix<T>& grad_rows, TransformerEncoder<T>& enc,
                            LabelEmbeddingTable<T>& table);

}  // namespace hbgl
