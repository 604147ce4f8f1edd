// SPDX-License-Identifier: Apache-2.0
#include "hbgl/encoder.hpp"

#include "hbgl/errors.hpp"
#include "hbgl/special_tokens.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace hbgl {

void EncoderConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
    if (hidden_size <= 0) fail("hidden_size must be positive");
    if (num_layers <= 0) fail("num_layers must be positive");
    if (num_heads <= 0 || hidden_size % num_heads != 0)
        fail("num_heads (" + std::to_string(num_heads) + ") must divide hidden_size (" +
             std::to_string(hidden_size) + ")");
    if (ffn_size <= 0) fail("ffn_size must be positive");
    if (vocab_size <= tokens::kNumReserved) fail("vocab_size must exceed the reserved token count");
    if (max_positions <= 0) fail("max_positions must be positive");
    if (num_segments != 2) fail("num_segments must be 2");
    if (dropout < 0.0 || dropout >= 1.0) fail("dropout must lie in [0, 1)");
}

namespace {

constexpr double kLayerNormEps = 1e-12;
constexpr double kInitStd = 0.02;

template <class T>
void init_normal(Parameter<T>& p, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, kInitStd);
    for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<T>(dist(rng));
}

template <class T>
Matrix<T> layer_norm(const Matrix<T>& x, const Parameter<T>& gamma, const Parameter<T>& beta,
                     LayerNormCache<T>* cache) {
    const auto n = x.rows();
    const auto d = x.cols();
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean = x.rowwise().mean();
    Matrix<T> centered = x.colwise() - mean;
    Eigen::Matrix<T, Eigen::Dynamic, 1> var = centered.array().square().rowwise().sum() / T(d);
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd =
        (var.array() + T(kLayerNormEps)).rsqrt().matrix();
    Matrix<T> xhat = centered.array().colwise() * rstd.array();
    Matrix<T> y(n, d);
    y = (xhat.array().rowwise() * gamma.value.row(0).array()).rowwise() + beta.value.row(0).array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->rstd = std::move(rstd);
    }
    return y;
}

// Gradient sinks are null when parameter gradients are not wanted.
template <class T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const LayerNormCache<T>& c, const Parameter<T>& gamma,
                              Parameter<T>* gamma_sink, Parameter<T>* beta_sink) {
    const T d = T(dy.cols());
    if (gamma_sink && !gamma_sink->frozen)
        gamma_sink->grad.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    if (beta_sink && !beta_sink->frozen) beta_sink->grad.row(0) += dy.colwise().sum();
    Matrix<T> dxhat = dy.array().rowwise() * gamma.value.row(0).array();
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dxhat = dxhat.rowwise().sum() / d;
    Eigen::Matrix<T, Eigen::Dynamic, 1> mean_dxhat_xhat =
        (dxhat.array() * c.xhat.array()).rowwise().sum() / d;
    Matrix<T> dx = dxhat.colwise() - mean_dxhat;
    dx -= (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
    dx = dx.array().colwise() * c.rstd.array();
    return dx;
}

template <class T>
Matrix<T> affine(const Matrix<T>& x, const Parameter<T>& w, const Parameter<T>& b) {
    Matrix<T> y = x * w.value;
    y.rowwise() += b.value.row(0);
    return y;
}

template <class T>
void affine_backward_params(const Matrix<T>& x, const Matrix<T>& dy, Parameter<T>* w, Parameter<T>* b) {
    if (w && !w->frozen) w->grad.noalias() += x.transpose() * dy;
    if (b && !b->frozen) b->grad.row(0) += dy.colwise().sum();
}

template <class T>
T gelu(T x) {
    return T(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
    const T pdf = std::exp(T(-0.5) * x * x) / std::sqrt(T(2) * std::numbers::pi_v<T>);
    return cdf + x * pdf;
}

template <class T>
Matrix<T> dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, std::mt19937_64& rng) {
    Matrix<T> m(rows, cols);
    std::bernoulli_distribution keep(1.0 - rate);
    const T scale = T(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(rng) ? scale : T(0);
    return m;
}

template <class T>
void softmax_rows(Matrix<T>& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        auto row = s.row(i);
        const T mx = row.maxCoeff();
        row = (row.array() - mx).exp();
        row /= row.sum();
    }
}

}  // namespace

template <class T>
TransformerEncoder<T>::TransformerEncoder(const EncoderConfig& config, std::uint64_t seed)
    : config_(config) {
    config_.validate();
    const int d = config_.hidden_size;
    std::mt19937_64 rng(seed);

    token_emb_ = Parameter<T>("embeddings.token", "embeddings", config_.vocab_size, d);
    pos_emb_ = Parameter<T>("embeddings.position", "embeddings", config_.max_positions, d);
    seg_emb_ = Parameter<T>("embeddings.segment", "embeddings", config_.num_segments, d);
    emb_ln_gamma_ = Parameter<T>("embeddings.ln.gamma", "embeddings", 1, d);
    emb_ln_beta_ = Parameter<T>("embeddings.ln.beta", "embeddings", 1, d);
    init_normal(token_emb_, rng);
    init_normal(pos_emb_, rng);
    init_normal(seg_emb_, rng);
    emb_ln_gamma_.value.setOnes();

    layers_.resize(config_.num_layers);
    for (int l = 0; l < config_.num_layers; ++l) {
        const std::string g = "layer." + std::to_string(l);
        auto& L = layers_[l];
        L.wq = Parameter<T>(g + ".attn.wq", g, d, d);
        L.bq = Parameter<T>(g + ".attn.bq", g, 1, d);
        L.wk = Parameter<T>(g + ".attn.wk", g, d, d);
        L.bk = Parameter<T>(g + ".attn.bk", g, 1, d);
        L.wv = Parameter<T>(g + ".attn.wv", g, d, d);
        L.bv = Parameter<T>(g + ".attn.bv", g, 1, d);
        L.wo = Parameter<T>(g + ".attn.wo", g, d, d);
        L.bo = Parameter<T>(g + ".attn.bo", g, 1, d);
        L.ln1_gamma = Parameter<T>(g + ".ln1.gamma", g, 1, d);
        L.ln1_beta = Parameter<T>(g + ".ln1.beta", g, 1, d);
        L.w1 = Parameter<T>(g + ".ffn.w1", g, d, config_.ffn_size);
        L.b1 = Parameter<T>(g + ".ffn.b1", g, 1, config_.ffn_size);
        L.w2 = Parameter<T>(g + ".ffn.w2", g, config_.ffn_size, d);
        L.b2 = Parameter<T>(g + ".ffn.b2", g, 1, d);
        L.ln2_gamma = Parameter<T>(g + ".ln2.gamma", g, 1, d);
        L.ln2_beta = Parameter<T>(g + ".ln2.beta", g, 1, d);
        for (auto* p : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2}) init_normal(*p, rng);
        L.ln1_gamma.value.setOnes();
        L.ln2_gamma.value.setOnes();
    }
    mlm_bias_ = Parameter<T>("mlm_head.bias", "mlm_head", 1, config_.vocab_size);
}

template <class T>
std::vector<Parameter<T>*> TransformerEncoder<T>::parameters() {
    std::vector<Parameter<T>*> out{&token_emb_, &pos_emb_, &seg_emb_, &emb_ln_gamma_, &emb_ln_beta_};
    for (auto& L : layers_) {
        for (auto* p : {&L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv, &L.wo, &L.bo, &L.ln1_gamma,
                        &L.ln1_beta, &L.w1, &L.b1, &L.w2, &L.b2, &L.ln2_gamma, &L.ln2_beta})
            out.push_back(p);
    }
    out.push_back(&mlm_bias_);
    return out;
}

template <class T>
std::vector<const Parameter<T>*> TransformerEncoder<T>::parameters() const {
    auto mut = const_cast<TransformerEncoder*>(this)->parameters();
    return {mut.begin(), mut.end()};
}

template <class T>
Parameter<T>& TransformerEncoder<T>::parameter(std::string_view name) {
    for (auto* p : parameters())
        if (p->name == name) return *p;
    throw IndexError("no encoder parameter named '" + std::string(name) + "'");
}

template <class T>
const Parameter<T>& TransformerEncoder<T>::parameter(std::string_view name) const {
    return const_cast<TransformerEncoder*>(this)->parameter(name);
}

template <class T>
std::vector<std::string> TransformerEncoder<T>::groups() const {
    std::vector<std::string> out;
    for (const auto* p : parameters())
        if (std::find(out.begin(), out.end(), p->group) == out.end()) out.push_back(p->group);
    return out;
}

template <class T>
void TransformerEncoder<T>::set_frozen(std::string_view group, bool frozen) {
    bool found = false;
    for (auto* p : parameters()) {
        if (p->group == group) {
            p->frozen = frozen;
            found = true;
        }
    }
    if (!found) throw IndexError("no parameter group '" + std::string(group) + "'");
}

template <class T>
void TransformerEncoder<T>::set_all_frozen(bool frozen) {
    for (auto* p : parameters()) p->frozen = frozen;
}

template <class T>
void TransformerEncoder<T>::zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
}

template <class T>
Matrix<T> TransformerEncoder<T>::embed(std::span<const int> token_ids, std::span<const int> position_ids,
                                       std::span<const int> segment_ids) const {
    Matrix<T> rows(static_cast<Eigen::Index>(token_ids.size()), config_.hidden_size);
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        const int t = token_ids[i];
        if (t < 0 || t >= config_.vocab_size)
            throw IndexError("token id " + std::to_string(t) + " out of range [0, " +
                             std::to_string(config_.vocab_size) + ")");
        rows.row(static_cast<Eigen::Index>(i)) = token_emb_.value.row(t);
    }
    add_position_segment(rows, position_ids, segment_ids);
    return rows;
}

template <class T>
void TransformerEncoder<T>::add_position_segment(Matrix<T>& rows, std::span<const int> position_ids,
                                                 std::span<const int> segment_ids) const {
    const auto n = static_cast<std::size_t>(rows.rows());
    if (position_ids.size() != n || segment_ids.size() != n)
        throw ShapeError("embedding id lists have " + std::to_string(position_ids.size()) + "/" +
                         std::to_string(segment_ids.size()) + " entries for " + std::to_string(n) +
                         " rows");
    for (std::size_t i = 0; i < n; ++i) {
        const int p = position_ids[i];
        const int s = segment_ids[i];
        if (p < 0 || p >= config_.max_positions)
            throw IndexError("position id " + std::to_string(p) + " out of range [0, " +
                             std::to_string(config_.max_positions) + ")");
        if (s < 0 || s >= config_.num_segments)
            throw IndexError("segment id " + std::to_string(s) + " out of range");
        rows.row(static_cast<Eigen::Index>(i)) += pos_emb_.value.row(p) + seg_emb_.value.row(s);
    }
}

template <class T>
void TransformerEncoder<T>::embed_backward(const Matrix<T>& grad_rows, std::span<const int> token_ids,
                                           std::span<const int> position_ids,
                                           std::span<const int> segment_ids) {
    for (Eigen::Index i = 0; i < grad_rows.rows(); ++i) {
        const auto k = static_cast<std::size_t>(i);
        if (!token_ids.empty() && token_ids[k] >= 0 && !token_emb_.frozen)
            token_emb_.grad.row(token_ids[k]) += grad_rows.row(i);
        if (!pos_emb_.frozen) pos_emb_.grad.row(position_ids[k]) += grad_rows.row(i);
        if (!seg_emb_.frozen) seg_emb_.grad.row(segment_ids[k]) += grad_rows.row(i);
    }
}

template <class T>
Matrix<T> TransformerEncoder<T>::bias_from(const AllowMatrix& allow) const {
    const auto n = static_cast<Eigen::Index>(allow.size());
    Matrix<T> bias(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j)
            bias(i, j) = allow(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) ? T(0)
                                                                                         : T(kBlockedLogit);
    return bias;
}

template <class T>
Matrix<T> TransformerEncoder<T>::forward(const Matrix<T>& input, const AllowMatrix& allow) const {
    ForwardCache<T> cache;
    return forward(input, allow, cache, nullptr);
}

template <class T>
Matrix<T> TransformerEncoder<T>::forward(const Matrix<T>& input, const AllowMatrix& allow,
                                         ForwardCache<T>& cache, std::mt19937_64* dropout_rng) const {
    const auto n = input.rows();
    const int d = config_.hidden_size;
    if (input.cols() != d)
        throw ShapeError("input rows have width " + std::to_string(input.cols()) + ", expected " +
                         std::to_string(d));
    if (static_cast<Eigen::Index>(allow.size()) != n)
        throw ShapeError("allow matrix side " + std::to_string(allow.size()) +
                         " does not match sequence length " + std::to_string(n));

    const double rate = config_.dropout;
    const bool drop = dropout_rng != nullptr && rate > 0.0;
    const int heads = config_.num_heads;
    const int dz = config_.head_size();
    const T scale = T(1) / std::sqrt(T(dz));

    cache.bias = bias_from(allow);
    cache.layers.assign(layers_.size(), {});

    Matrix<T> x = layer_norm(input, emb_ln_gamma_, emb_ln_beta_, &cache.emb_ln);
    cache.emb_dropout.resize(0, 0);
    if (drop) {
        cache.emb_dropout = dropout_mask<T>(n, d, rate, *dropout_rng);
        x.array() *= cache.emb_dropout.array();
    }

    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& L = layers_[l];
        auto& c = cache.layers[l];
        c.input = x;
        c.q = affine(x, L.wq, L.bq);
        c.k = affine(x, L.wk, L.bk);
        c.v = affine(x, L.wv, L.bv);
        c.context.resize(n, d);
        c.probs.resize(heads);
        c.probs_dropout.clear();
        for (int h = 0; h < heads; ++h) {
            Matrix<T> s = c.q.middleCols(h * dz, dz) * c.k.middleCols(h * dz, dz).transpose();
            s *= scale;
            s += cache.bias;
            softmax_rows(s);
            c.probs[h] = std::move(s);
            if (drop) {
                c.probs_dropout.push_back(dropout_mask<T>(n, n, rate, *dropout_rng));
                Matrix<T> pd = c.probs[h].cwiseProduct(c.probs_dropout.back());
                c.context.middleCols(h * dz, dz).noalias() = pd * c.v.middleCols(h * dz, dz);
            } else {
                c.context.middleCols(h * dz, dz).noalias() = c.probs[h] * c.v.middleCols(h * dz, dz);
            }
        }
        Matrix<T> attn = affine(c.context, L.wo, L.bo);
        c.attn_dropout.resize(0, 0);
        if (drop) {
            c.attn_dropout = dropout_mask<T>(n, d, rate, *dropout_rng);
            attn.array() *= c.attn_dropout.array();
        }
        Matrix<T> y1 = layer_norm<T>(x + attn, L.ln1_gamma, L.ln1_beta, &c.ln1);
        c.ffn_pre = affine(y1, L.w1, L.b1);
        c.ffn_act = c.ffn_pre.unaryExpr([](T v) { return gelu(v); });
        Matrix<T> out = affine(c.ffn_act, L.w2, L.b2);
        c.ffn_dropout.resize(0, 0);
        if (drop) {
            c.ffn_dropout = dropout_mask<T>(n, d, rate, *dropout_rng);
            out.array() *= c.ffn_dropout.array();
        }
        x = layer_norm<T>(y1 + out, L.ln2_gamma, L.ln2_beta, &c.ln2);
    }
    return x;
}

template <class T>
Matrix<T> TransformerEncoder<T>::backward(const ForwardCache<T>& cache, const Matrix<T>& grad_output,
                                          bool accumulate_params) {
    return backward_impl(cache, grad_output, accumulate_params ? this : nullptr);
}

template <class T>
Matrix<T> TransformerEncoder<T>::input_gradient(const ForwardCache<T>& cache,
                                                const Matrix<T>& grad_output) const {
    return backward_impl(cache, grad_output, nullptr);
}

template <class T>
Matrix<T> TransformerEncoder<T>::backward_impl(const ForwardCache<T>& cache, const Matrix<T>& grad_output,
                                               TransformerEncoder* sink) const {
    const int heads = config_.num_heads;
    const int dz = config_.head_size();
    const T scale = T(1) / std::sqrt(T(dz));
    if (cache.layers.size() != layers_.size())
        throw ShapeError("forward cache holds " + std::to_string(cache.layers.size()) +
                         " layers, encoder has " + std::to_string(layers_.size()));

    Matrix<T> dx = grad_output;
    for (std::size_t li = layers_.size(); li-- > 0;) {
        const auto& L = layers_[li];
        LayerParams<T>* G = sink ? &sink->layers_[li] : nullptr;
        auto g = [G](Parameter<T> LayerParams<T>::*member) { return G ? &(G->*member) : nullptr; };
        using LP = LayerParams<T>;
        const auto& c = cache.layers[li];

        // x_out = LN2(y1 + ffn(y1))
        Matrix<T> dz2 = layer_norm_backward(dx, c.ln2, L.ln2_gamma, g(&LP::ln2_gamma), g(&LP::ln2_beta));
        Matrix<T> dout = dz2;
        if (c.ffn_dropout.size() > 0) dout.array() *= c.ffn_dropout.array();
        affine_backward_params(c.ffn_act, dout, g(&LP::w2), g(&LP::b2));
        Matrix<T> dact = dout * L.w2.value.transpose();
        Matrix<T> dpre = dact.cwiseProduct(c.ffn_pre.unaryExpr([](T v) { return gelu_grad(v); }));
        // y1 is recovered from the LN1 cache: y1 = xhat1 * gamma + beta.
        Matrix<T> y1 = (c.ln1.xhat.array().rowwise() * L.ln1_gamma.value.row(0).array()).rowwise() +
                       L.ln1_beta.value.row(0).array();
        affine_backward_params(y1, dpre, g(&LP::w1), g(&LP::b1));
        Matrix<T> dy1 = dz2;
        dy1.noalias() += dpre * L.w1.value.transpose();

        // y1 = LN1(x + attn(x))
        Matrix<T> dz1 = layer_norm_backward(dy1, c.ln1, L.ln1_gamma, g(&LP::ln1_gamma), g(&LP::ln1_beta));
        Matrix<T> dattn = dz1;
        if (c.attn_dropout.size() > 0) dattn.array() *= c.attn_dropout.array();
        affine_backward_params(c.context, dattn, g(&LP::wo), g(&LP::bo));
        Matrix<T> dctx = dattn * L.wo.value.transpose();

        const auto n = c.input.rows();
        Matrix<T> dq(n, config_.hidden_size), dk(n, config_.hidden_size), dv(n, config_.hidden_size);
        for (int h = 0; h < heads; ++h) {
            auto dctx_h = dctx.middleCols(h * dz, dz);
            const bool dropped = !c.probs_dropout.empty();
            Matrix<T> pd = dropped ? Matrix<T>(c.probs[h].cwiseProduct(c.probs_dropout[h])) : c.probs[h];
            dv.middleCols(h * dz, dz).noalias() = pd.transpose() * dctx_h;
            Matrix<T> dp = dctx_h * c.v.middleCols(h * dz, dz).transpose();
            if (dropped) dp.array() *= c.probs_dropout[h].array();
            Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = (dp.array() * c.probs[h].array()).rowwise().sum();
            Matrix<T> ds = c.probs[h].array() * (dp.colwise() - rowdot).array();
            ds *= scale;
            dq.middleCols(h * dz, dz).noalias() = ds * c.k.middleCols(h * dz, dz);
            dk.middleCols(h * dz, dz).noalias() = ds.transpose() * c.q.middleCols(h * dz, dz);
        }
        affine_backward_params(c.input, dq, g(&LP::wq), g(&LP::bq));
        affine_backward_params(c.input, dk, g(&LP::wk), g(&LP::bk));
        affine_backward_params(c.input, dv, g(&LP::wv), g(&LP::bv));
        dx = dz1;
        dx.noalias() += dq * L.wq.value.transpose();
        dx.noalias() += dk * L.wk.value.transpose();
        dx.noalias() += dv * L.wv.value.transpose();
    }

    if (cache.emb_dropout.size() > 0) dx.array() *= cache.emb_dropout.array();
    return layer_norm_backward(dx, cache.emb_ln, emb_ln_gamma_, sink ? &sink->emb_ln_gamma_ : nullptr,
                               sink ? &sink->emb_ln_beta_ : nullptr);
}

template <class T>
Matrix<T> TransformerEncoder<T>::forward_incremental(const Matrix<T>& new_rows, const AllowMatrix& new_allow,
                                                     KvCache<T>& kv, std::size_t keep) const {
    const auto r = new_rows.rows();
    const int d = config_.hidden_size;
    if (new_rows.cols() != d)
        throw ShapeError("input rows have width " + std::to_string(new_rows.cols()) + ", expected " +
                         std::to_string(d));
    if (static_cast<Eigen::Index>(new_allow.size()) != r)
        throw ShapeError("allow matrix side " + std::to_string(new_allow.size()) +
                         " does not match new row count " + std::to_string(r));
    if (keep > static_cast<std::size_t>(r)) throw ShapeError("keep exceeds the number of new rows");
    if (kv.keys.empty()) {
        kv.keys.assign(layers_.size(), Matrix<T>(0, d));
        kv.values.assign(layers_.size(), Matrix<T>(0, d));
    }

    const auto cached = static_cast<Eigen::Index>(kv.rows());
    const int heads = config_.num_heads;
    const int dz = config_.head_size();
    const T scale = T(1) / std::sqrt(T(dz));

    Matrix<T> bias = Matrix<T>::Zero(r, cached + r);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < r; ++j)
            if (!new_allow(static_cast<std::size_t>(i), static_cast<std::size_t>(j)))
                bias(i, cached + j) = T(kBlockedLogit);

    Matrix<T> x = layer_norm<T>(new_rows, emb_ln_gamma_, emb_ln_beta_, nullptr);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        const auto& L = layers_[l];
        Matrix<T> q = affine(x, L.wq, L.bq);
        Matrix<T> keys(cached + r, d), values(cached + r, d);
        keys << kv.keys[l], affine(x, L.wk, L.bk);
        values << kv.values[l], affine(x, L.wv, L.bv);

        Matrix<T> context(r, d);
        for (int h = 0; h < heads; ++h) {
            Matrix<T> s = q.middleCols(h * dz, dz) * keys.middleCols(h * dz, dz).transpose();
            s *= scale;
            s += bias;
            softmax_rows(s);
            context.middleCols(h * dz, dz).noalias() = s * values.middleCols(h * dz, dz);
        }
        Matrix<T> y1 = layer_norm<T>(x + affine(context, L.wo, L.bo), L.ln1_gamma, L.ln1_beta, nullptr);
        Matrix<T> act = affine(y1, L.w1, L.b1).unaryExpr([](T v) { return gelu(v); });
        x = layer_norm<T>(y1 + affine(act, L.w2, L.b2), L.ln2_gamma, L.ln2_beta, nullptr);

        const auto kept = static_cast<Eigen::Index>(keep);
        kv.keys[l] = keys.topRows(cached + kept);
        kv.values[l] = values.topRows(cached + kept);
    }
    return x;
}

template class TransformerEncoder<float>;
template class TransformerEncoder<double>;

template <class T>
void SgdOptimizer<T>::step(std::span<Parameter<T>* const> params, double learning_rate) {
    for (auto* p : params) {
        if (p->frozen) continue;
        p->value -= T(learning_rate) * p->grad;
    }
}

template <class T>
void AdamOptimizer<T>::step(std::span<Parameter<T>* const> params, double learning_rate) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto* p : params) {
        if (p->frozen) continue;
        auto& s = state_[p];
        if (s.m.size() == 0) {
            s.m = Matrix<T>::Zero(p->value.rows(), p->value.cols());
            s.v = Matrix<T>::Zero(p->value.rows(), p->value.cols());
        }
        s.m = T(beta1_) * s.m + T(1.0 - beta1_) * p->grad;
        s.v = T(beta2_) * s.v + T(1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
        const T lr = T(learning_rate);
        const T eps = T(eps_);
        p->value.array() -= lr * (s.m.array() / T(c1)) / ((s.v.array() / T(c2)).sqrt() + eps);
    }
}

template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

template <class T>
void backward_and_step(std::span<Parameter<T>* const> params, Optimizer<T>& optimizer, double loss,
                       double learning_rate, std::string_view context) {
    if (!std::isfinite(loss)) {
        std::string msg = "non-finite loss";
        if (!context.empty()) msg += " (" + std::string(context) + ")";
        throw NumericError(msg);
    }
    optimizer.step(params, learning_rate);
    for (auto* p : params) p->zero_grad();
}

template void backward_and_step<float>(std::span<Parameter<float>* const>, Optimizer<float>&, double,
                                       double, std::string_view);
template void backward_and_step<double>(std::span<Parameter<double>* const>, Optimizer<double>&, double,
                                        double, std::string_view);

namespace {

struct MaskedSequence {
    std::vector<int> input;
    std::vector<int> positions;
    std::vector<int> segments;
    std::vector<int> masked;    // positions that were masked
    std::vector<int> original;  // their original token ids
};

MaskedSequence mask_sequence(const std::vector<int>& text, double mask_prob, int max_length,
                             std::mt19937_64& rng) {
    MaskedSequence m;
    const std::size_t body = std::min<std::size_t>(text.size(), static_cast<std::size_t>(max_length - 2));
    m.input.push_back(tokens::kCls);
    m.input.insert(m.input.end(), text.begin(), text.begin() + static_cast<std::ptrdiff_t>(body));
    m.input.push_back(tokens::kSep);
    std::bernoulli_distribution pick(mask_prob);
    for (std::size_t i = 1; i + 1 < m.input.size(); ++i) {
        if (mask_prob > 0.0 && pick(rng)) {
            m.masked.push_back(static_cast<int>(i));
            m.original.push_back(m.input[i]);
            m.input[i] = tokens::kMask;
        }
    }
    m.positions.resize(m.input.size());
    for (std::size_t i = 0; i < m.positions.size(); ++i) m.positions[i] = static_cast<int>(i);
    m.segments.assign(m.input.size(), 0);
    return m;
}

}  // namespace

MlmReport pretrain_mlm(TransformerEncoder<float>& enc, const std::vector<std::vector<int>>& corpus,
                       const MlmConfig& cfg) {
    if (corpus.empty()) throw ValidationError("pretrain_mlm: empty corpus");
    if (cfg.max_length < 3 || cfg.max_length > enc.config().max_positions)
        throw ConfigError("pretrain_mlm: max_length must lie in [3, max_positions]");
    MlmReport report;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, corpus.size() - 1);
    AdamOptimizer<float> adam;
    auto params = enc.parameters();
    enc.zero_grad();

    for (int step = 0; step < cfg.steps; ++step) {
        double loss = 0.0;
        std::vector<MaskedSequence> batch;
        long masked = 0;
        for (int b = 0; b < cfg.batch_size; ++b) {
            batch.push_back(mask_sequence(corpus[pick(rng)], cfg.mask_prob, cfg.max_length, rng));
            masked += static_cast<long>(batch.back().masked.size());
        }
        if (masked == 0) {
            report.losses.push_back(0.0);
            continue;
        }
        const auto& table = enc.token_embeddings();
        for (const auto& seq : batch) {
            if (seq.masked.empty()) continue;
            ForwardCache<float> cache;
            MatrixF rows = enc.embed(seq.input, seq.positions, seq.segments);
            MatrixF hidden = enc.forward(rows, AllowMatrix::full(seq.input.size()), cache, &rng);
            MatrixF hm(static_cast<Eigen::Index>(seq.masked.size()), hidden.cols());
            for (std::size_t k = 0; k < seq.masked.size(); ++k) hm.row(static_cast<Eigen::Index>(k)) = hidden.row(seq.masked[k]);
            MatrixF logits = hm * table.value.transpose();
            logits.rowwise() += enc.mlm_bias().value.row(0);
            MatrixF dlogits = logits;
            for (Eigen::Index k = 0; k < logits.rows(); ++k) {
                auto row = dlogits.row(k);
                const float mx = row.maxCoeff();
                row = (row.array() - mx).exp();
                const float z = row.sum();
                row /= z;
                const int target = seq.original[static_cast<std::size_t>(k)];
                loss += -(static_cast<double>(logits(k, target)) - mx - std::log(static_cast<double>(z)));
                row(target) -= 1.0f;
            }
            dlogits /= static_cast<float>(masked);
            auto& tok = enc.token_embeddings();
            if (!tok.frozen) tok.grad.noalias() += dlogits.transpose() * hm;
            if (!enc.mlm_bias().frozen) enc.mlm_bias().grad.row(0) += dlogits.colwise().sum();
            MatrixF dhm = dlogits * tok.value;
            MatrixF dhidden = MatrixF::Zero(hidden.rows(), hidden.cols());
            for (std::size_t k = 0; k < seq.masked.size(); ++k) dhidden.row(seq.masked[k]) = dhm.row(static_cast<Eigen::Index>(k));
            MatrixF drows = enc.backward(cache, dhidden, true);
            enc.embed_backward(drows, seq.input, seq.positions, seq.segments);
        }
        loss /= static_cast<double>(masked);
        report.losses.push_back(loss);
        report.masked_tokens += masked;
        backward_and_step<float>(params, adam, loss, cfg.learning_rate, "pretrain_mlm step " + std::to_string(step));
    }
    return report;
}

double mlm_accuracy(const TransformerEncoder<float>& enc, const std::vector<std::vector<int>>& corpus,
                    double mask_prob, std::uint64_t seed, int max_length) {
    std::mt19937_64 rng(seed);
    long correct = 0;
    long total = 0;
    for (const auto& text : corpus) {
        auto seq = mask_sequence(text, mask_prob, max_length, rng);
        if (seq.masked.empty()) continue;
        MatrixF hidden = enc.forward(enc.embed(seq.input, seq.positions, seq.segments),
                                     AllowMatrix::full(seq.input.size()));
        for (std::size_t k = 0; k < seq.masked.size(); ++k) {
            RowVector<float> logits = hidden.row(seq.masked[k]) * enc.token_embeddings().value.transpose();
            logits += enc.mlm_bias().value.row(0);
            Eigen::Index best = 0;
            logits.maxCoeff(&best);
            correct += (static_cast<int>(best) == seq.original[k]);
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace hbgl
