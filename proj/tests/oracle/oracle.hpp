// SPDX-License-Identifier: Apache-2.0
// Brute-force reference implementations for tests. Nothing here may depend
// on the library under test; inputs and outputs are plain vectors.
#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;
using BoolMat = std::vector<std::vector<bool>>;

inline constexpr std::size_t kMaxPositions = 50;

class SizeCapError : public std::length_error {
public:
    using std::length_error::length_error;
};

/// allow(i, j) = i == j or an edge joins i and j in either direction.
BoolMat mask_from_edges(std::size_t n, const std::vector<std::pair<int, int>>& parent_child_edges);

/// Packed [CLS] text [SEP] | u_1..u_D [SEP] | m_1..m_D [SEP] mask, built by
/// listing each position's role and applying the attention rules pairwise.
BoolMat packed_mask(std::size_t text_tokens, int depth);

struct Layer {
    Mat wq, bq, wk, bk, wv, bv, wo, bo;
    Mat ln1_gamma, ln1_beta;
    Mat w1, b1, w2, b2;
    Mat ln2_gamma, ln2_beta;
};

struct Encoder {
    int heads = 1;
    Mat emb_ln_gamma, emb_ln_beta;
    std::vector<Layer> layers;
};

/// Post-LN encoder forward with scalar loops. Blocked keys are skipped
/// entirely rather than biased.
Mat naive_forward(const Encoder& enc, const Mat& input, const BoolMat& allow);

/// -sum y log s + (1 - y) log(1 - s), with s clamped to [eps, 1 - eps].
double loop_bce(const Mat& scores, const Mat& targets, double eps = 1.1920929e-7);

/// Central differences of f at x, one coordinate at a time.
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double step);

/// Four per-label attention logits (u2 split into a2 + b2, u1 into a1 + b1),
/// summed: sum over p in {a2, b2}, q in {a1, b1} of (p Wq)(q Wk)^T.
double split_label_logit_sum(const std::vector<double>& a1, const std::vector<double>& b1, const std::vector<double>& a2,
                     const std::vector<double>& b2, const Mat& wq, const Mat& wk);

/// (u Wq)(v Wk)^T with u, v given directly.
double raw_logit(const std::vector<double>& u, const std::vector<double>& v, const Mat& wq, const Mat& wk);

}  // namespace oracle
