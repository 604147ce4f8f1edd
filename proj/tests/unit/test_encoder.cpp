// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include "hbgl/encoder.hpp"
#include "hbgl/errors.hpp"
#include "hbgl/special_tokens.hpp"
#include "support.hpp"

#include <cmath>
#include <limits>

using namespace hbgl;

namespace {

AllowMatrix random_allow(std::size_t n, std::mt19937_64& rng) {
    AllowMatrix a = AllowMatrix::identity(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (rng() % 2) a.set(i, j, true);
    return a;
}

double max_diff(const oracle::Mat& a, const oracle::Mat& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b[i][j]));
    return m;
}

// Fixed random linear readout, so the loss depends on every output entry.
template <class T>
double readout(const Matrix<T>& h, const Matrix<T>& w) {
    return static_cast<double>(h.cwiseProduct(w).sum());
}

}  // namespace

TEST_CASE("forward agrees with the scalar reference") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        auto enc = TransformerEncoder<double>(testing::small_config(30, 16, 2, trial % 2 ? 4 : 2), 100 + trial);
        testing::jitter(enc, 200 + trial);
        const std::size_t n = 3 + rng() % 10;
        const auto input = testing::random_rows<double>(static_cast<Eigen::Index>(n), 16, 300 + trial);
        const auto allow = random_allow(n, rng);
        const auto got = testing::to_mat(enc.forward(input, allow));
        const auto want = oracle::naive_forward(testing::to_oracle(enc), testing::to_mat(input), testing::to_bool(allow));
        CHECK(max_diff(got, want) < 1e-9);

        const auto encf = enc.cast<float>();
        const auto gotf = testing::to_mat(encf.forward(MatrixF(input.cast<float>()), allow));
        CHECK(max_diff(gotf, want) < 1e-4);
    }
}

TEST_CASE("blocked rows have no influence") {
    std::mt19937_64 rng(5);
    auto enc = TransformerEncoder<double>(testing::small_config(), 9);
    testing::jitter(enc, 10);
    const std::size_t n = 8;
    AllowMatrix allow = AllowMatrix::identity(n);
    // Rows 0..4 see each other; rows 5..7 see everything.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if ((i < 5 && j < 5) || i >= 5) allow.set(i, j, true);
    auto input = testing::random_rows<double>(n, 16, 11);
    const auto base = enc.forward(input, allow);
    input.row(6) *= -3.0;
    input.row(7).setConstant(2.0);
    const auto moved = enc.forward(input, allow);
    CHECK((base.topRows(5) - moved.topRows(5)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((base.bottomRows(3) - moved.bottomRows(3)).cwiseAbs().maxCoeff() > 1e-3);
}

TEST_CASE("training forward without dropout matches inference forward") {
    auto enc = TransformerEncoder<float>(testing::small_config(), 1);
    const auto input = testing::random_rows<float>(6, 16, 2);
    const auto allow = AllowMatrix::full(6);
    ForwardCache<float> cache;
    CHECK(enc.forward(input, allow, cache, nullptr) == enc.forward(input, allow));

    std::mt19937_64 rng(4);
    ForwardCache<float> dcache;
    CHECK_FALSE(enc.forward(input, allow, dcache, &rng) == enc.forward(input, allow));

    auto cfg = testing::small_config();
    cfg.dropout = 0.0;
    TransformerEncoder<float> nodrop(cfg, 1);
    ForwardCache<float> c2;
    CHECK(nodrop.forward(input, allow, c2, &rng) == nodrop.forward(input, allow));
}

TEST_CASE("backward matches central differences in double precision") {
    auto cfg = testing::small_config(20, 8, 2, 2);
    cfg.dropout = 0.0;
    TransformerEncoder<double> enc(cfg, 21);
    testing::jitter(enc, 22, 0.1);
    std::mt19937_64 rng(23);
    const std::size_t n = 5;
    const auto input = testing::random_rows<double>(n, 8, 24);
    const auto allow = random_allow(n, rng);
    const auto w = testing::random_rows<double>(n, 8, 25);

    ForwardCache<double> cache;
    const auto h = enc.forward(input, allow, cache, nullptr);
    enc.zero_grad();
    const MatrixD dinput = enc.backward(cache, w, true);

    std::mt19937_64 pick(26);
    for (auto* p : enc.parameters()) {
        if (p->group == "mlm_head" || (p->name.rfind("embeddings.", 0) == 0 && p->name.find(".ln.") == std::string::npos))
            continue;  // not on the forward path of pre-embedded rows
        for (int k = 0; k < 3; ++k) {
            const auto idx = static_cast<Eigen::Index>(pick() % static_cast<std::uint64_t>(p->value.size()));
            const double keep = p->value.data()[idx];
            const auto f = [&](const std::vector<double>& x) {
                p->value.data()[idx] = x[0];
                const double v = readout(enc.forward(input, allow), w);
                p->value.data()[idx] = keep;
                return v;
            };
            const double fd = oracle::fd_gradient(f, {keep}, 1e-5)[0];
            const double an = p->grad.data()[idx];
            CHECK_MESSAGE(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(fd)), p->name);
        }
    }
    for (Eigen::Index idx = 0; idx < input.size(); idx += 7) {
        const auto f = [&](const std::vector<double>& x) {
            MatrixD in = input;
            in.data()[idx] = x[0];
            return readout(enc.forward(in, allow), w);
        };
        const double fd = oracle::fd_gradient(f, {input.data()[idx]}, 1e-5)[0];
        CHECK(std::abs(fd - dinput.data()[idx]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
    (void)h;
}

TEST_CASE("backward with a fixed dropout draw matches central differences") {
    auto cfg = testing::small_config(20, 8, 2, 2);
    cfg.dropout = 0.2;
    TransformerEncoder<double> enc(cfg, 31);
    testing::jitter(enc, 32, 0.1);
    std::mt19937_64 rng(33);
    const std::size_t n = 5;
    const auto input = testing::random_rows<double>(n, 8, 34);
    const auto allow = random_allow(n, rng);
    const auto w = testing::random_rows<double>(n, 8, 35);
    const auto run = [&](const MatrixD& in) {
        std::mt19937_64 drop(36);
        ForwardCache<double> c;
        return readout(enc.forward(in, allow, c, &drop), w);
    };

    std::mt19937_64 drop(36);
    ForwardCache<double> cache;
    enc.forward(input, allow, cache, &drop);
    enc.zero_grad();
    const MatrixD dinput = enc.backward(cache, w, true);

    std::mt19937_64 pick(37);
    for (auto* p : enc.parameters()) {
        if (p->group == "mlm_head" || (p->name.rfind("embeddings.", 0) == 0 && p->name.find(".ln.") == std::string::npos))
            continue;
        for (int k = 0; k < 3; ++k) {
            const auto idx = static_cast<Eigen::Index>(pick() % static_cast<std::uint64_t>(p->value.size()));
            const double keep = p->value.data()[idx];
            const auto f = [&](const std::vector<double>& x) {
                p->value.data()[idx] = x[0];
                const double v = run(input);
                p->value.data()[idx] = keep;
                return v;
            };
            const double fd = oracle::fd_gradient(f, {keep}, 1e-5)[0];
            CHECK_MESSAGE(std::abs(fd - p->grad.data()[idx]) <= 1e-6 * std::max(1.0, std::abs(fd)), p->name);
        }
    }
    for (Eigen::Index idx = 0; idx < input.size(); idx += 7) {
        const auto f = [&](const std::vector<double>& x) {
            MatrixD in = input;
            in.data()[idx] = x[0];
            return run(in);
        };
        const double fd = oracle::fd_gradient(f, {input.data()[idx]}, 1e-5)[0];
        CHECK(std::abs(fd - dinput.data()[idx]) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("input_gradient leaves parameters untouched and equals backward") {
    TransformerEncoder<double> enc(testing::small_config(), 31);
    const auto input = testing::random_rows<double>(4, 16, 32);
    ForwardCache<double> cache;
    const auto h = enc.forward(input, AllowMatrix::full(4), cache, nullptr);
    const auto w = testing::random_rows<double>(4, 16, 33);
    enc.zero_grad();
    const MatrixD a = enc.input_gradient(cache, w);
    for (const auto* p : enc.parameters()) CHECK(p->grad.cwiseAbs().sum() == 0.0);
    const MatrixD b = enc.backward(cache, w, false);
    for (const auto* p : enc.parameters()) CHECK(p->grad.cwiseAbs().sum() == 0.0);
    CHECK(a == b);
    (void)h;
}

TEST_CASE("frozen groups receive no gradient") {
    TransformerEncoder<double> enc(testing::small_config(), 41);
    CHECK(enc.groups() == std::vector<std::string>{"embeddings", "layer.0", "layer.1", "mlm_head"});
    enc.set_frozen("layer.0", true);
    CHECK_THROWS_AS(enc.set_frozen("layer.9", true), IndexError);
    const auto input = testing::random_rows<double>(4, 16, 42);
    ForwardCache<double> cache;
    enc.forward(input, AllowMatrix::full(4), cache, nullptr);
    enc.zero_grad();
    enc.backward(cache, testing::random_rows<double>(4, 16, 43), true);
    for (const auto* p : enc.parameters()) {
        if (p->group == "layer.0") CHECK(p->grad.cwiseAbs().sum() == 0.0);
        if (p->group == "layer.1") CHECK(p->grad.cwiseAbs().sum() > 0.0);
    }
    SgdOptimizer<double> sgd;
    auto params = enc.parameters();
    for (auto* p : params) p->grad.setOnes();
    const MatrixD before = enc.layer(0).wq.value;
    const MatrixD before1 = enc.layer(1).wq.value;
    sgd.step(params, 0.5);
    CHECK(enc.layer(0).wq.value == before);
    CHECK((before1 - enc.layer(1).wq.value).cwiseAbs().maxCoeff() == doctest::Approx(0.5));
}

TEST_CASE("incremental forward reproduces the full pass") {
    TransformerEncoder<double> enc(testing::small_config(), 51);
    testing::jitter(enc, 52);
    std::mt19937_64 rng(53);
    const std::size_t a = 5, b = 3, c = 2;
    const std::size_t n = a + b + c;
    AllowMatrix full(n);
    // Block a: internal; block b sees a and its own prefix; block c sees a, b and itself.
    for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < a; ++j) full.set(i, j, true);
    for (std::size_t i = a; i < a + b; ++i)
        for (std::size_t j = 0; j <= i; ++j) full.set(i, j, true);
    for (std::size_t i = a + b; i < n; ++i)
        for (std::size_t j = 0; j < a + b; ++j) full.set(i, j, true);
    for (std::size_t i = a + b; i < n; ++i) full.set(i, i, true);
    const auto input = testing::random_rows<double>(n, 16, 54);
    const auto want = enc.forward(input, full);

    KvCache<double> kv;
    std::vector<std::size_t> ia(a), ib(b), ic(c);
    for (std::size_t i = 0; i < a; ++i) ia[i] = i;
    for (std::size_t i = 0; i < b; ++i) ib[i] = a + i;
    for (std::size_t i = 0; i < c; ++i) ic[i] = a + b + i;
    const auto ha = enc.forward_incremental(input.topRows(a), full.submatrix(ia), kv, a);
    CHECK(kv.rows() == a);
    const auto hb = enc.forward_incremental(input.middleRows(a, b), full.submatrix(ib), kv, b);
    const auto hc = enc.forward_incremental(input.bottomRows(c), full.submatrix(ic), kv, 0);
    CHECK(kv.rows() == a + b);
    CHECK((ha - want.topRows(a)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((hb - want.middleRows(a, b)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((hc - want.bottomRows(c)).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(enc.forward_incremental(input.topRows(2), AllowMatrix::full(3), kv, 0), ShapeError);
    CHECK_THROWS_AS(enc.forward_incremental(input.topRows(2), AllowMatrix::full(2), kv, 3), ShapeError);
}

TEST_CASE("shape and config errors") {
    TransformerEncoder<float> enc(testing::small_config(), 1);
    CHECK_THROWS_AS(enc.forward(MatrixF::Zero(3, 8), AllowMatrix::full(3)), ShapeError);
    CHECK_THROWS_AS(enc.forward(MatrixF::Zero(3, 16), AllowMatrix::full(4)), ShapeError);
    auto cfg = testing::small_config();
    cfg.num_heads = 3;
    CHECK_THROWS_AS(TransformerEncoder<float>(cfg, 1), ConfigError);
    cfg = testing::small_config();
    cfg.vocab_size = 0;
    CHECK_THROWS_AS(TransformerEncoder<float>(cfg, 1), ConfigError);
    CHECK_THROWS_AS(enc.parameter("nope"), IndexError);
}

TEST_CASE("embed sums token, position and segment rows") {
    TransformerEncoder<double> enc(testing::small_config(), 61);
    const std::vector<int> tok{1, 7, 2}, pos{0, 1, 5}, seg{0, 0, 1};
    const auto rows = enc.embed(tok, pos, seg);
    for (int i = 0; i < 3; ++i) {
        const RowVector<double> want = enc.token_embeddings().value.row(tok[i]) +
                                       enc.position_embeddings().value.row(pos[i]) +
                                       enc.segment_embeddings().value.row(seg[i]);
        CHECK((rows.row(i) - want).cwiseAbs().maxCoeff() < 1e-15);
    }
    enc.zero_grad();
    const MatrixD g = MatrixD::Ones(3, 16);
    enc.embed_backward(g, std::vector<int>{1, -1, 1}, pos, seg);
    CHECK(enc.token_embeddings().grad.row(1).sum() == doctest::Approx(32.0));
    CHECK(enc.token_embeddings().grad.sum() == doctest::Approx(32.0));
    CHECK(enc.segment_embeddings().grad.row(0).sum() == doctest::Approx(32.0));
}

TEST_CASE("optimizers") {
    Parameter<double> p("p", "g", 1, 3);
    p.value << 1.0, -2.0, 0.5;
    p.grad << 0.1, -4.0, 0.0;
    std::vector<Parameter<double>*> ps{&p};
    AdamOptimizer<double> adam;
    adam.step(ps, 0.01);
    // First Adam step moves each coordinate by lr * g / (|g| + eps').
    CHECK(p.value(0, 0) == doctest::Approx(0.99).epsilon(1e-6));
    CHECK(p.value(0, 1) == doctest::Approx(-1.99).epsilon(1e-6));
    CHECK(p.value(0, 2) == 0.5);
    CHECK(adam.steps_taken() == 1);

    p.grad.setOnes();
    CHECK_THROWS_AS(backward_and_step<double>(ps, adam, std::numeric_limits<double>::quiet_NaN(), 0.1, "ctx"),
                    NumericError);
    SgdOptimizer<double> sgd;
    backward_and_step<double>(ps, sgd, 1.0, 0.1);
    CHECK(p.value(0, 2) == doctest::Approx(0.4));
    CHECK(p.grad.cwiseAbs().sum() == 0.0);
}

TEST_CASE("masked-token pretraining learns a copy task") {
    auto cfg = testing::small_config(12, 16, 1, 2);
    TransformerEncoder<float> enc(cfg, 71);
    // Each sequence repeats one token, so a masked token is recoverable from its neighbours.
    std::vector<std::vector<int>> corpus;
    for (int t = tokens::kNumReserved; t < 12; ++t) corpus.push_back(std::vector<int>(6, t));
    MlmConfig mc;
    mc.steps = 300;
    mc.learning_rate = 3e-3;
    mc.batch_size = 8;
    mc.max_length = 16;
    mc.seed = 3;
    const double before = mlm_accuracy(enc, corpus, 0.3, 9, 16);
    const auto report = pretrain_mlm(enc, corpus, mc);
    CHECK(report.losses.size() == 300);
    CHECK(report.losses.back() < report.losses.front());
    CHECK(mlm_accuracy(enc, corpus, 0.3, 9, 16) > std::max(0.9, before));

    TransformerEncoder<float> again(cfg, 71);
    const auto r2 = pretrain_mlm(again, corpus, mc);
    CHECK(r2.losses == report.losses);
    CHECK(again.token_embeddings().value == enc.token_embeddings().value);

    CHECK_THROWS_AS(pretrain_mlm(enc, {}, mc), ValidationError);
    mc.max_length = 1000;
    CHECK_THROWS_AS(pretrain_mlm(enc, corpus, mc), ConfigError);
}
