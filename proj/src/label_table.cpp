// SPDX-License-Identifier: Apache-2.0
#include "hbgl/label_table.hpp"

#include "hbgl/errors.hpp"

namespace hbgl {

template <class T>
Matrix<T> assemble_rows(const InputSpec& spec, const TransformerEncoder<T>& enc,
                        const LabelEmbeddingTable<T>& table) {
    const int d = enc.config().hidden_size;
    if (table.size() > 0 && table.dim() != d)
        throw ShapeError("label table width " + std::to_string(table.dim()) + " differs from hidden size " +
                         std::to_string(d));
    Matrix<T> rows = Matrix<T>::Zero(static_cast<Eigen::Index>(spec.size()), d);
    const auto& tokens = enc.token_embeddings().value;
    for (std::size_t i = 0; i < spec.size(); ++i) {
        const auto& src = spec.sources[i];
        auto row = rows.row(static_cast<Eigen::Index>(i));
        switch (src.kind) {
            case RowSource::Kind::kToken:
                if (src.token < 0 || src.token >= enc.config().vocab_size)
                    throw IndexError("token id " + std::to_string(src.token) + " out of range");
                row = tokens.row(src.token);
                break;
            case RowSource::Kind::kLabelSum:
                for (LabelId id : src.labels) {
                    if (id < 0 || static_cast<std::size_t>(id) >= table.size())
                        throw IndexError("label id " + std::to_string(id) + " out of range");
                    row += table.weights().value.row(id);
                }
                break;
            case RowSource::Kind::kZero:
                break;
        }
    }
    enc.add_position_segment(rows, spec.positions, spec.segments);
    return rows;
}

template <class T>
void assemble_rows_backward(const InputSpec& spec, const Matrix<T>& grad_rows, TransformerEncoder<T>& enc,
                            LabelEmbeddingTable<T>& table) {
    std::vector<int> token_ids(spec.size(), -1);
    auto& labels = table.weights();
    for (std::size_t i = 0; i < spec.size(); ++i) {
        const auto& src = spec.sources[i];
        if (src.kind == RowSource::Kind::kToken) {
            token_ids[i] = src.token;
        } else if (src.kind == RowSource::Kind::kLabelSum && !labels.frozen) {
            for (LabelId id : src.labels) labels.grad.row(id) += grad_rows.row(static_cast<Eigen::Index>(i));
        }
    }
    enc.embed_backward(grad_rows, token_ids, spec.positions, spec.segments);
}

template MatrixF assemble_rows<float>(const InputSpec&, const TransformerEncoder<float>&,
                                      const LabelEmbeddingTable<float>&);
template MatrixD assemble_rows<double>(const InputSpec&, const TransformerEncoder<double>&,
                                       const LabelEmbeddingTable<double>&);
template void assemble_rows_backward<float>(const InputSpec&, const MatrixF&, TransformerEncoder<float>&,
                                            LabelEmbeddingTable<float>&);
template void assemble_rows_backward<double>(const InputSpec&, const MatrixD&, TransformerEncoder<double>&,
                                             LabelEmbeddingTable<double>&);

}  // namespace hbgl
