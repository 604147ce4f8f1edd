// SPDX-License-Identifier: Apache-2.0
#include "oracle.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace oracle {

namespace {

void cap(std::size_t n) {
    if (n > kMaxPositions)
        throw SizeCapError("oracle instance of size " + std::to_string(n) + " exceeds the cap of " +
                           std::to_string(kMaxPositions));
}

std::vector<double> row_times(const std::vector<double>& x, const Mat& w) {
    std::vector<double> out(w[0].size(), 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < out.size(); ++j) out[j] += x[i] * w[i][j];
    return out;
}

std::vector<double> affine(const std::vector<double>& x, const Mat& w, const Mat& b) {
    auto out = row_times(x, w);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += b[0][j];
    return out;
}

std::vector<double> layer_norm(const std::vector<double>& x, const Mat& gamma, const Mat& beta) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        out[i] = (x[i] - mean) / std::sqrt(var + 1e-12) * gamma[0][i] + beta[0][i];
    return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

BoolMat mask_from_edges(std::size_t n, const std::vector<std::pair<int, int>>& edges) {
    cap(n);
    BoolMat m(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) m[i][i] = true;
    for (const auto& [p, c] : edges) {
        m[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)] = true;
        m[static_cast<std::size_t>(p)][static_cast<std::size_t>(c)] = true;
    }
    return m;
}

BoolMat packed_mask(std::size_t text_tokens, int depth) {
    enum Part { kText, kTeacher, kMasked };
    struct Role {
        Part part;
        int level;
    };
    std::vector<Role> roles;
    for (std::size_t i = 0; i < text_tokens + 2; ++i) roles.push_back({kText, 0});
    for (int h = 1; h <= depth + 1; ++h) roles.push_back({kTeacher, h});
    for (int h = 1; h <= depth + 1; ++h) roles.push_back({kMasked, h});
    const std::size_t n = roles.size();
    cap(n);
    BoolMat m(n, std::vector<bool>(n, false));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const Role a = roles[i], b = roles[j];
            bool ok = false;
            switch (a.part) {
                case kText:
                    ok = b.part == kText;
                    break;
                case kTeacher:
                    ok = b.part == kText || (b.part == kTeacher && b.level <= a.level);
                    break;
                case kMasked:
                    ok = b.part == kText || (b.part == kTeacher && b.level < a.level) || i == j;
                    break;
            }
            m[i][j] = ok;
        }
    }
    return m;
}

Mat naive_forward(const Encoder& enc, const Mat& input, const BoolMat& allow) {
    const std::size_t n = input.size();
    cap(n);
    Mat x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = layer_norm(input[i], enc.emb_ln_gamma, enc.emb_ln_beta);
    const std::size_t d = input[0].size();
    const std::size_t dz = d / static_cast<std::size_t>(enc.heads);
    for (const auto& L : enc.layers) {
        Mat q(n), k(n), v(n);
        for (std::size_t i = 0; i < n; ++i) {
            q[i] = affine(x[i], L.wq, L.bq);
            k[i] = affine(x[i], L.wk, L.bk);
            v[i] = affine(x[i], L.wv, L.bv);
        }
        Mat ctx(n, std::vector<double>(d, 0.0));
        for (int h = 0; h < enc.heads; ++h) {
            const std::size_t off = static_cast<std::size_t>(h) * dz;
            for (std::size_t i = 0; i < n; ++i) {
                std::vector<double> logits(n, 0.0);
                double mx = -1e300;
                for (std::size_t j = 0; j < n; ++j) {
                    if (!allow[i][j]) continue;
                    double s = 0.0;
                    for (std::size_t t = 0; t < dz; ++t) s += q[i][off + t] * k[j][off + t];
                    logits[j] = s / std::sqrt(static_cast<double>(dz));
                    mx = std::max(mx, logits[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (allow[i][j]) z += std::exp(logits[j] - mx);
                for (std::size_t j = 0; j < n; ++j) {
                    if (!allow[i][j]) continue;
                    const double p = std::exp(logits[j] - mx) / z;
                    for (std::size_t t = 0; t < dz; ++t) ctx[i][off + t] += p * v[j][off + t];
                }
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            auto attn = affine(ctx[i], L.wo, L.bo);
            for (std::size_t t = 0; t < d; ++t) attn[t] += x[i][t];
            auto y1 = layer_norm(attn, L.ln1_gamma, L.ln1_beta);
            auto hid = affine(y1, L.w1, L.b1);
            for (double& h : hid) h = gelu(h);
            auto out = affine(hid, L.w2, L.b2);
            for (std::size_t t = 0; t < d; ++t) out[t] += y1[t];
            x[i] = layer_norm(out, L.ln2_gamma, L.ln2_beta);
        }
    }
    return x;
}

double loop_bce(const Mat& scores, const Mat& targets, double eps) {
    double loss = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        for (std::size_t j = 0; j < scores[i].size(); ++j) {
            const double s = std::min(std::max(scores[i][j], eps), 1.0 - eps);
            const double y = targets[i][j];
            loss -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
        }
    }
    return loss;
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                                double step) {
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + step;
        const double up = f(x);
        x[i] = keep - step;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * step);
    }
    return g;
}

double raw_logit(const std::vector<double>& u, const std::vector<double>& v, const Mat& wq, const Mat& wk) {
    const auto q = row_times(u, wq);
    const auto k = row_times(v, wk);
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) s += q[i] * k[i];
    return s;
}

double split_label_logit_sum(const std::vector<double>& a1, const std::vector<double>& b1, const std::vector<double>& a2,
                     const std::vector<double>& b2, const Mat& wq, const Mat& wk) {
    return raw_logit(a2, a1, wq, wk) + raw_logit(a2, b1, wq, wk) + raw_logit(b2, a1, wq, wk) +
           raw_logit(b2, b1, wq, wk);
}

}  // namespace oracle
