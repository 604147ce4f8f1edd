// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "hbgl/allow_matrix.hpp"
#include "hbgl/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hbgl {

struct EncoderConfig {
    int hidden_size = 64;
    int num_layers = 2;
    int num_heads = 4;
    int ffn_size = 256;
    int vocab_size = 0;
    int max_positions = 512;
    int num_segments = 2;
    double dropout = 0.1;

    int head_size() const { return hidden_size / num_heads; }
    /// Throws ConfigError if the dimensions are inconsistent.
    void validate() const;
    bool operator==(const EncoderConfig&) const = default;
};

template <class T>
struct LayerParams {
    Parameter<T> wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<T> ln1_gamma, ln1_beta;
    Parameter<T> w1, b1, w2, b2;
    Parameter<T> ln2_gamma, ln2_beta;
};

template <class T>
struct LayerNormCache {
    Matrix<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <class T>
struct LayerCache {
    Matrix<T> input;
    Matrix<T> q, k, v;
    std::vector<Matrix<T>> probs;          // per head, post-softmax
    std::vector<Matrix<T>> probs_dropout;  // per head scale masks; empty when disabled
    Matrix<T> context;
    Matrix<T> attn_dropout;
    LayerNormCache<T> ln1;
    Matrix<T> ffn_pre;
    Matrix<T> ffn_act;
    Matrix<T> ffn_dropout;
    LayerNormCache<T> ln2;
};

/// Activations recorded by a training forward pass, consumed by backward().
template <class T>
struct ForwardCache {
    Matrix<T> bias;  // additive attention bias derived from the allow matrix
    LayerNormCache<T> emb_ln;
    Matrix<T> emb_dropout;
    std::vector<LayerCache<T>> layers;
};

/// Per-layer keys and values of rows already processed by
/// TransformerEncoder::forward_incremental.
template <class T>
struct KvCache {
    std::vector<Matrix<T>> keys;
    std::vector<Matrix<T>> values;

    std::size_t rows() const { return keys.empty() ? 0 : static_cast<std::size_t>(keys.front().rows()); }
};

/// Miniature post-LayerNorm bidirectional transformer encoder with additive
/// attention masking in every layer and hand-written backward passes.
///
/// Parameters are partitioned into groups ("embeddings", "layer.<i>",
/// "mlm_head") that can be frozen independently. Frozen parameters never
/// receive gradient and are skipped by every optimizer.
template <class T>
class TransformerEncoder {
public:
    static constexpr double kBlockedLogit = -1e9;

    TransformerEncoder(const EncoderConfig& config, std::uint64_t seed);

    const EncoderConfig& config() const { return config_; }

    Parameter<T>& token_embeddings() { return token_emb_; }
    const Parameter<T>& token_embeddings() const { return token_emb_; }
    Parameter<T>& position_embeddings() { return pos_emb_; }
    const Parameter<T>& position_embeddings() const { return pos_emb_; }
    Parameter<T>& segment_embeddings() { return seg_emb_; }
    const Parameter<T>& segment_embeddings() const { return seg_emb_; }
    Parameter<T>& mlm_bias() { return mlm_bias_; }
    const Parameter<T>& mlm_bias() const { return mlm_bias_; }
    LayerParams<T>& layer(std::size_t i) { return layers_.at(i); }
    const LayerParams<T>& layer(std::size_t i) const { return layers_.at(i); }

    std::vector<Parameter<T>*> parameters();
    std::vector<const Parameter<T>*> parameters() const;
    Parameter<T>& parameter(std::string_view name);
    const Parameter<T>& parameter(std::string_view name) const;
    std::vector<std::string> groups() const;

    void set_frozen(std::string_view group, bool frozen);
    void set_all_frozen(bool frozen);
    void zero_grad();

    /// token + segment + position embedding sums, one row per position.
    Matrix<T> embed(std::span<const int> token_ids, std::span<const int> position_ids,
                    std::span<const int> segment_ids) const;
    /// Adds segment and position embeddings to caller-provided rows in place.
    void add_position_segment(Matrix<T>& rows, std::span<const int> position_ids,
                              std::span<const int> segment_ids) const;
    /// Scatters row gradients into the token/position/segment tables. A token
    /// id of -1 skips the token table for that row.
    void embed_backward(const Matrix<T>& grad_rows, std::span<const int> token_ids,
                        std::span<const int> position_ids, std::span<const int> segment_ids);

    /// Inference forward pass (dropout disabled).
    Matrix<T> forward(const Matrix<T>& input, const AllowMatrix& allow) const;
    /// Forward pass recording activations into `cache`. Dropout is applied iff
    /// `dropout_rng` is non-null and the configured rate is positive.
    Matrix<T> forward(const Matrix<T>& input, const AllowMatrix& allow, ForwardCache<T>& cache,
                      std::mt19937_64* dropout_rng) const;
    /// Backpropagates `grad_output` and returns the gradient with respect to
    /// the input rows. Parameter gradients are accumulated only when
    /// `accumulate_params` is set, and never into frozen parameters.
    Matrix<T> backward(const ForwardCache<T>& cache, const Matrix<T>& grad_output,
                       bool accumulate_params);
    /// Gradient with respect to the input rows only; parameters untouched.
    Matrix<T> input_gradient(const ForwardCache<T>& cache, const Matrix<T>& grad_output) const;

    /// Processes `new_rows` on top of the rows already held in `kv`. Every new
    /// row may attend every cached row; among new rows `new_allow` applies.
    /// Keys/values of the first `keep` new rows are appended to `kv`.
    Matrix<T> forward_incremental(const Matrix<T>& new_rows, const AllowMatrix& new_allow,
                                  KvCache<T>& kv, std::size_t keep) const;

    /// Copy at a different numeric width (used by 64-bit gradient checks).
    template <class U>
    TransformerEncoder<U> cast() const {
        TransformerEncoder<U> out(config_, 0);
        auto src = parameters();
        auto dst = out.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i]->value = src[i]->value.template cast<U>();
            dst[i]->grad.setZero(dst[i]->value.rows(), dst[i]->value.cols());
            dst[i]->frozen = src[i]->frozen;
        }
        return out;
    }

private:
    Matrix<T> bias_from(const AllowMatrix& allow) const;
    Matrix<T> backward_impl(const ForwardCache<T>& cache, const Matrix<T>& grad_output,
                            TransformerEncoder* sink) const;

    EncoderConfig config_;
    Parameter<T> token_emb_, pos_emb_, seg_emb_, emb_ln_gamma_, emb_ln_beta_;
    std::vector<LayerParams<T>> layers_;
    Parameter<T> mlm_bias_;
};

extern template class TransformerEncoder<float>;
extern template class TransformerEncoder<double>;

template <class T>
class Optimizer {
public:
    virtual ~Optimizer() = default;
    /// Updates every non-frozen parameter from its accumulated gradient.
    virtual void step(std::span<Parameter<T>* const> params, double learning_rate) = 0;
};

template <class T>
class SgdOptimizer final : public Optimizer<T> {
public:
    void step(std::span<Parameter<T>* const> params, double learning_rate) override;
};

template <class T>
class AdamOptimizer final : public Optimizer<T> {
public:
    AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), eps_(eps) {}
    void step(std::span<Parameter<T>* const> params, double learning_rate) override;
    long steps_taken() const { return t_; }

private:
    struct Moments {
        Matrix<T> m, v;
    };
    double beta1_, beta2_, eps_;
    long t_ = 0;
    std::unordered_map<const Parameter<T>*, Moments> state_;
};

/// Checks the loss, applies one optimizer step, and clears gradients.
/// Throws NumericError (with `context` in the message) on a non-finite loss.
template <class T>
void backward_and_step(std::span<Parameter<T>* const> params, Optimizer<T>& optimizer, double loss,
                       double learning_rate, std::string_view context = {});

struct MlmConfig {
    int steps = 500;
    int batch_size = 16;
    double mask_prob = 0.15;
    double learning_rate = 1e-3;
    int max_length = 128;
    std::uint64_t seed = 0;
};

struct MlmReport {
    std::vector<double> losses;  // mean loss per step
    long masked_tokens = 0;
};

/// Masked-token pretraining over tokenized sequences. Each step draws
/// `batch_size` sequences, replaces each token with [MASK] with probability
/// `mask_prob`, and predicts the originals through the tied token table.
MlmReport pretrain_mlm(TransformerEncoder<float>& enc, const std::vector<std::vector<int>>& corpus,
                       const MlmConfig& cfg);

/// Fraction of masked tokens predicted exactly (argmax) on `corpus`.
double mlm_accuracy(const TransformerEncoder<float>& enc, const std::vector<std::vector<int>>& corpus,
                    double mask_prob, std::uint64_t seed, int max_length = 128);

}  // namespace hbgl
