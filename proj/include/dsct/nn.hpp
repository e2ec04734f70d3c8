#pragma once

// Transformer building blocks: layer norm, multi-head attention, position-wise
// feed-forward, sinusoidal positions. Shared by the encoder, the decoder and
// the single-stream ablation model.

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dsct/tensor.hpp"

namespace dsct {

template <typename S>
using NamedParams = std::vector<std::pair<std::string, TensorT<S>>>;

template <typename S>
TensorT<S> xavier_uniform(Shape shape, Rng& rng) {
    const size_t fan_in = shape.size() == 2 ? shape[0] : shape[0];
    const size_t fan_out = shape.size() == 2 ? shape[1] : shape[0];
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    auto t = TensorT<S>::zeros(std::move(shape));
    for (auto& v : t.values_mut()) v = S((rng.uniform() * 2.0 - 1.0) * limit);
    t.set_requires_grad();
    return t;
}

// ---------------------------------------------------------------------------
// layer normalization over the last axis, with learned scale/shift

template <typename S>
struct LayerNormParamsT {
    TensorT<S> alpha; // scale, length d_model
    TensorT<S> beta;  // shift, length d_model
    double epsilon = 1e-8;

    static LayerNormParamsT make(size_t d) {
        LayerNormParamsT p;
        p.alpha = TensorT<S>::full({d}, S(1)).set_requires_grad();
        p.beta = TensorT<S>::zeros({d}).set_requires_grad();
        return p;
    }
    size_t d_model() const { return alpha.dim(0); }
    void collect(const std::string& prefix, NamedParams<S>& out) const {
        out.emplace_back(prefix + ".alpha", alpha);
        out.emplace_back(prefix + ".beta", beta);
    }
};

// y = (x − mean) / sqrt(var + eps) * alpha + beta, per position over the last axis
template <typename S>
TensorT<S> layer_norm(const TensorT<S>& x, const LayerNormParamsT<S>& p) {
    const size_t d = p.d_model();
    if (x.ndim() == 0 || x.shape().back() != d)
        throw ShapeError("layer_norm: last dim of " + shape_str(x.shape()) + " must be " +
                         std::to_string(d));
    const size_t rows = x.numel() / d;
    auto xn = x.node();
    auto an = p.alpha.node();
    auto bn = p.beta.node();
    auto rn = detail::make_result<S>(x.shape(), {xn, an, bn});

    std::vector<S> xhat(x.numel());
    std::vector<S> inv_std(rows);
    const S invd = S(1) / S(d);
    for (size_t r = 0; r < rows; ++r) {
        const S* row = xn->data.data() + r * d;
        S m = S(0);
        for (size_t j = 0; j < d; ++j) m += row[j];
        m *= invd;
        S var = S(0);
        for (size_t j = 0; j < d; ++j) {
            const S dv = row[j] - m;
            var += dv * dv;
        }
        var *= invd;
        const S inv = S(1) / std::sqrt(var + S(p.epsilon));
        inv_std[r] = inv;
        for (size_t j = 0; j < d; ++j) {
            const S xh = (row[j] - m) * inv;
            xhat[r * d + j] = xh;
            rn->data[r * d + j] = xh * an->data[j] + bn->data[j];
        }
    }
    if (rn->requires_grad) {
        rn->backward_fn = [xn, an, bn, rows, d, invd, xhat = std::move(xhat),
                           inv_std = std::move(inv_std)](NodeT<S>& r) {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (size_t row = 0; row < rows; ++row) {
                const S* g = r.grad.data() + row * d;
                const S* xh = xhat.data() + row * d;
                if (an->requires_grad)
                    for (size_t j = 0; j < d; ++j) an->grad[j] += g[j] * xh[j];
                if (bn->requires_grad)
                    for (size_t j = 0; j < d; ++j) bn->grad[j] += g[j];
                if (xn->requires_grad) {
                    // dx = inv·(gα − mean(gα) − xhat·mean(gα·xhat))
                    S mean_ga = S(0), mean_gax = S(0);
                    for (size_t j = 0; j < d; ++j) {
                        const S ga = g[j] * an->data[j];
                        mean_ga += ga;
                        mean_gax += ga * xh[j];
                    }
                    mean_ga *= invd;
                    mean_gax *= invd;
                    const S inv = inv_std[row];
                    for (size_t j = 0; j < d; ++j) {
                        const S ga = g[j] * an->data[j];
                        xn->grad[row * d + j] += inv * (ga - mean_ga - xh[j] * mean_gax);
                    }
                }
            }
        };
    }
    return TensorT<S>(rn);
}

// ---------------------------------------------------------------------------
// multi-head attention

template <typename S>
struct AttentionParamsT {
    TensorT<S> wq, wk, wv, wo; // all d_model × d_model
    size_t heads = 1;

    static AttentionParamsT make(size_t d, size_t heads, Rng& rng) {
        if (d % heads != 0)
            throw ContractError("attention: d_model " + std::to_string(d) + " not divisible by " +
                                std::to_string(heads) + " heads");
        AttentionParamsT p;
        p.wq = xavier_uniform<S>({d, d}, rng);
        p.wk = xavier_uniform<S>({d, d}, rng);
        p.wv = xavier_uniform<S>({d, d}, rng);
        p.wo = xavier_uniform<S>({d, d}, rng);
        p.heads = heads;
        return p;
    }
    size_t d_model() const { return wq.dim(0); }
    void collect(const std::string& prefix, NamedParams<S>& out) const {
        out.emplace_back(prefix + ".wq", wq);
        out.emplace_back(prefix + ".wk", wk);
        out.emplace_back(prefix + ".wv", wv);
        out.emplace_back(prefix + ".wo", wo);
    }
};

constexpr double kMaskForbid = -1e9;

// additive pre-softmax mask: 0 where attending is allowed, -1e9 where forbidden
template <typename S>
TensorT<S> causal_mask(size_t len) {
    auto m = TensorT<S>::zeros({len, len});
    auto& d = m.values_mut();
    for (size_t i = 0; i < len; ++i)
        for (size_t j = i + 1; j < len; ++j) d[i * len + j] = S(kMaskForbid);
    return m;
}

// softmax((Q·Kᵀ)/sqrt(d/h) + mask)·V per head, concatenated, then W_o.
// probs_out, when given, receives the per-head attention matrices.
template <typename S>
TensorT<S> multi_head_attention(const TensorT<S>& q, const TensorT<S>& k, const TensorT<S>& v,
                                const AttentionParamsT<S>& p,
                                const TensorT<S>* mask = nullptr,
                                std::vector<TensorT<S>>* probs_out = nullptr) {
    const size_t d = p.d_model();
    if (q.ndim() != 2 || q.dim(1) != d)
        throw ShapeError("attention: query " + shape_str(q.shape()) + " vs d_model " + std::to_string(d));
    if (k.shape() != v.shape())
        throw ShapeError("attention: key " + shape_str(k.shape()) + " and value " + shape_str(v.shape()) +
                         " must match");
    const size_t lq = q.dim(0), lk = k.dim(0);
    if (mask) {
        if (mask->shape() != Shape{lq, lk})
            throw ShapeError("attention: mask " + shape_str(mask->shape()) + " vs scores [" +
                             std::to_string(lq) + "," + std::to_string(lk) + "]");
        for (size_t i = 0; i < lq; ++i) {
            bool any_allowed = false;
            for (size_t j = 0; j < lk; ++j)
                if (mask->value(i * lk + j) == S(0)) { any_allowed = true; break; }
            if (!any_allowed)
                throw ContractError("attention: mask forbids every key for query row " + std::to_string(i));
        }
    }

    auto qp = matmul(q, p.wq);
    auto kp = matmul(k, p.wk);
    auto vp = matmul(v, p.wv);
    const size_t dh = d / p.heads;
    const S inv_sqrt = S(1.0 / std::sqrt(double(dh)));

    std::vector<TensorT<S>> heads;
    heads.reserve(p.heads);
    for (size_t h = 0; h < p.heads; ++h) {
        auto qh = slice_cols(qp, h * dh, dh);
        auto kh = slice_cols(kp, h * dh, dh);
        auto vh = slice_cols(vp, h * dh, dh);
        auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        if (mask) scores = add(scores, *mask);
        auto probs = softmax(scores, 1);
        if (probs_out) probs_out->push_back(probs);
        heads.push_back(matmul(probs, vh));
    }
    return matmul(concat_cols(heads), p.wo);
}

template <typename S>
TensorT<S> masked_self_attention(const TensorT<S>& x, const AttentionParamsT<S>& p) {
    auto mask = causal_mask<S>(x.dim(0));
    return multi_head_attention(x, x, x, p, &mask);
}

// ---------------------------------------------------------------------------
// position-wise feed-forward

enum class Activation { Relu, Identity };

template <typename S>
struct PwffParamsT {
    TensorT<S> w1, b1, w2, b2;
    Activation activation = Activation::Relu;

    static PwffParamsT make(size_t d, size_t d_ff, Rng& rng) {
        PwffParamsT p;
        p.w1 = xavier_uniform<S>({d, d_ff}, rng);
        p.b1 = TensorT<S>::zeros({d_ff}).set_requires_grad();
        p.w2 = xavier_uniform<S>({d_ff, d}, rng);
        p.b2 = TensorT<S>::zeros({d}).set_requires_grad();
        return p;
    }
    void collect(const std::string& prefix, NamedParams<S>& out) const {
        out.emplace_back(prefix + ".w1", w1);
        out.emplace_back(prefix + ".b1", b1);
        out.emplace_back(prefix + ".w2", w2);
        out.emplace_back(prefix + ".b2", b2);
    }
};

template <typename S>
TensorT<S> pwff(const TensorT<S>& x, const PwffParamsT<S>& p) {
    auto h = add(matmul(x, p.w1), p.b1);
    if (p.activation == Activation::Relu) h = relu(h);
    return add(matmul(h, p.w2), p.b2);
}

// ---------------------------------------------------------------------------
// sinusoidal positional encoding

template <typename S>
TensorT<S> sinusoidal_pe(size_t seq_len, size_t d_model) {
    if (d_model % 2 != 0)
        throw ContractError("sinusoidal_pe: d_model must be even, got " + std::to_string(d_model));
    auto pe = TensorT<S>::zeros({seq_len, d_model});
    auto& d = pe.values_mut();
    for (size_t pos = 0; pos < seq_len; ++pos)
        for (size_t i = 0; i < d_model / 2; ++i) {
            const double rate = std::pow(10000.0, double(2 * i) / double(d_model));
            d[pos * d_model + 2 * i] = S(std::sin(double(pos) / rate));
            d[pos * d_model + 2 * i + 1] = S(std::cos(double(pos) / rate));
        }
    return pe;
}

} // namespace dsct
