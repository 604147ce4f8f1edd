// SPDX-License-Identifier: Apache-2.0
// Test glue: random instances and conversions into the oracle's plain types.
#pragma once

#include "hbgl/allow_matrix.hpp"
#include "hbgl/encoder.hpp"
#include "hbgl/hierarchy.hpp"
#include "hbgl/label_table.hpp"
#include "oracle/oracle.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace testing {

/// Random DAG over n labels: each non-root label gets 1-3 parents among
/// the labels before it, so ids are topologically ordered.
inline hbgl::LabelHierarchy random_dag(std::size_t n, std::mt19937_64& rng, double root_prob = 0.2) {
    std::vector<std::string> names;
    std::vector<std::vector<hbgl::LabelId>> parents(n);
    for (std::size_t i = 0; i < n; ++i) {
        names.push_back("l" + std::to_string(i));
        if (i == 0 || std::uniform_real_distribution<double>(0, 1)(rng) < root_prob) continue;
        const int k = 1 + static_cast<int>(rng() % 3);
        for (int e = 0; e < k; ++e) {
            const auto p = static_cast<hbgl::LabelId>(rng() % i);
            if (std::find(parents[i].begin(), parents[i].end(), p) == parents[i].end()) parents[i].push_back(p);
        }
    }
    return hbgl::LabelHierarchy::build(names, parents);
}

inline std::vector<std::pair<int, int>> edges_of(const hbgl::LabelHierarchy& h) {
    std::vector<std::pair<int, int>> e;
    for (std::size_t i = 0; i < h.size(); ++i)
        for (auto p : h.parents(static_cast<hbgl::LabelId>(i))) e.emplace_back(p, static_cast<int>(i));
    return e;
}

inline oracle::BoolMat to_bool(const hbgl::AllowMatrix& a) {
    oracle::BoolMat m(a.size(), std::vector<bool>(a.size()));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a.size(); ++j) m[i][j] = a(i, j);
    return m;
}

template <class M>
oracle::Mat to_mat(const M& x) {
    oracle::Mat m(static_cast<std::size_t>(x.rows()), std::vector<double>(static_cast<std::size_t>(x.cols())));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) m[i][j] = static_cast<double>(x(i, j));
    return m;
}

template <class T>
oracle::Encoder to_oracle(const hbgl::TransformerEncoder<T>& enc) {
    oracle::Encoder o;
    o.heads = enc.config().num_heads;
    o.emb_ln_gamma = to_mat(enc.parameter("embeddings.ln.gamma").value);
    o.emb_ln_beta = to_mat(enc.parameter("embeddings.ln.beta").value);
    for (int l = 0; l < enc.config().num_layers; ++l) {
        const auto& L = enc.layer(static_cast<std::size_t>(l));
        o.layers.push_back({to_mat(L.wq.value), to_mat(L.bq.value), to_mat(L.wk.value), to_mat(L.bk.value),
                            to_mat(L.wv.value), to_mat(L.bv.value), to_mat(L.wo.value), to_mat(L.bo.value),
                            to_mat(L.ln1_gamma.value), to_mat(L.ln1_beta.value), to_mat(L.w1.value),
                            to_mat(L.b1.value), to_mat(L.w2.value), to_mat(L.b2.value), to_mat(L.ln2_gamma.value),
                            to_mat(L.ln2_beta.value)});
    }
    return o;
}

/// Perturbs every parameter so LayerNorm gains and biases are not trivial.
template <class T>
void jitter(hbgl::TransformerEncoder<T>& enc, std::uint64_t seed, double scale = 0.05) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    for (auto* p : enc.parameters())
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] += static_cast<T>(g(rng));
}

inline hbgl::EncoderConfig small_config(int vocab = 30, int hidden = 16, int layers = 2, int heads = 2) {
    hbgl::EncoderConfig c;
    c.hidden_size = hidden;
    c.num_layers = layers;
    c.num_heads = heads;
    c.ffn_size = 2 * hidden;
    c.vocab_size = vocab;
    c.max_positions = 64;
    c.dropout = 0.1;
    return c;
}

template <class T>
hbgl::Matrix<T> random_rows(Eigen::Index n, Eigen::Index d, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, scale);
    hbgl::Matrix<T> m(n, d);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(g(rng));
    return m;
}

/// Fills a label table with N(0, scale^2) entries.
template <class T>
void randomize(hbgl::LabelEmbeddingTable<T>& t, std::uint64_t seed, double scale = 0.5) {
    t.weights().value = random_rows<T>(t.weights().value.rows(), t.weights().value.cols(), seed, scale);
}

}  // namespace testing
