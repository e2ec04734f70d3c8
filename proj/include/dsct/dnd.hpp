#pragma once

// Dynamic nomination decoder. Each layer runs masked text self-attention,
// cross-attends the words to each consolidated stream with shared MHA/PWFF
// weights, and fuses the two candidates per word. The DNM fusion hard-selects
// one stream per word by argmax over a seq×2 logit head; training relaxes the
// selection with a straight-through Gumbel-softmax.

#include <string>
#include <vector>

#include "dsct/nn.hpp"
#include "dsct/psmae.hpp"

namespace dsct {

enum class FusionMode { Dnm, Add, Concat };

struct GumbelConfig {
    double temperature = 1.0;
    bool train_noise = true; // Gumbel noise on in training; inference is always noiseless argmax
};

// per-word one-hot stream selection: column 0 = region, column 1 = segmentation
template <typename S>
struct NominationMapT {
    TensorT<S> psi; // seq × 2, each row exactly one-hot
};

template <typename S>
struct DndLayerParamsT {
    // text stream (θ_t)
    AttentionParamsT<S> text_mhsa;
    LayerNormParamsT<S> ln_t0, ln_t1;
    // shared across the two cross-attention branches (θ_rs)
    AttentionParamsT<S> mha;
    PwffParamsT<S> pwff;
    LayerNormParamsT<S> ln_rs0; // the one shared LN
    // private per branch
    LayerNormParamsT<S> ln_r0, ln_r1;
    LayerNormParamsT<S> ln_s0, ln_s1;
    // nomination head (seq×2 logits); only used in Dnm mode
    TensorT<S> dnm_w; // d_model × 2
    TensorT<S> dnm_b; // 2
    // 2d→d projection; only used in Concat mode
    TensorT<S> concat_w;

    static DndLayerParamsT make(size_t d, size_t heads, size_t d_ff, FusionMode mode, Rng& rng) {
        DndLayerParamsT p;
        p.text_mhsa = AttentionParamsT<S>::make(d, heads, rng);
        p.ln_t0 = LayerNormParamsT<S>::make(d);
        p.ln_t1 = LayerNormParamsT<S>::make(d);
        p.mha = AttentionParamsT<S>::make(d, heads, rng);
        p.pwff = PwffParamsT<S>::make(d, d_ff, rng);
        p.ln_rs0 = LayerNormParamsT<S>::make(d);
        p.ln_r0 = LayerNormParamsT<S>::make(d);
        p.ln_r1 = LayerNormParamsT<S>::make(d);
        p.ln_s0 = LayerNormParamsT<S>::make(d);
        p.ln_s1 = LayerNormParamsT<S>::make(d);
        if (mode == FusionMode::Dnm) {
            p.dnm_w = xavier_uniform<S>({d, 2}, rng);
            p.dnm_b = TensorT<S>::zeros({2}).set_requires_grad();
        } else if (mode == FusionMode::Concat) {
            p.concat_w = xavier_uniform<S>({2 * d, d}, rng);
        }
        return p;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        text_mhsa.collect(prefix + ".text_mhsa", out);
        ln_t0.collect(prefix + ".ln_t0", out);
        ln_t1.collect(prefix + ".ln_t1", out);
        mha.collect(prefix + ".shared.mha", out);
        pwff.collect(prefix + ".shared.pwff", out);
        ln_rs0.collect(prefix + ".shared.ln_rs0", out);
        ln_r0.collect(prefix + ".private_r.ln0", out);
        ln_r1.collect(prefix + ".private_r.ln1", out);
        ln_s0.collect(prefix + ".private_s.ln0", out);
        ln_s1.collect(prefix + ".private_s.ln1", out);
        if (dnm_w.numel() > 0) {
            out.emplace_back(prefix + ".dnm.w", dnm_w);
            out.emplace_back(prefix + ".dnm.b", dnm_b);
        }
        if (concat_w.numel() > 0) out.emplace_back(prefix + ".concat.w", concat_w);
    }
};

// Ẑ_t = LN(LN(M_MHSA(z_t) + z_t) + z_t)
template <typename S>
TensorT<S> text_self_attend(const TensorT<S>& z_t, const DndLayerParamsT<S>& p, double keep_prob,
                            Rng& rng, bool training) {
    auto att = dropout(masked_self_attention(z_t, p.text_mhsa), keep_prob, rng, training);
    auto u = layer_norm(add(att, z_t), p.ln_t0);
    return layer_norm(add(u, z_t), p.ln_t1);
}

enum class StreamKind { Region, Segmentation };

// M = LN(LN(MHA(words, mem, mem) + words; shared) + words; private0)
// out = LN(PWFF(M) + M; private1); the MHA/PWFF weights are shared across branches
template <typename S>
TensorT<S> cross_attend_stream(const TensorT<S>& hat_t, const TensorT<S>& mem,
                               const DndLayerParamsT<S>& p, StreamKind which, double keep_prob,
                               Rng& rng, bool training) {
    const auto& ln0 = which == StreamKind::Region ? p.ln_r0 : p.ln_s0;
    const auto& ln1 = which == StreamKind::Region ? p.ln_r1 : p.ln_s1;
    auto att = dropout(multi_head_attention(hat_t, mem, mem, p.mha), keep_prob, rng, training);
    auto u = layer_norm(add(att, hat_t), p.ln_rs0);
    auto m = layer_norm(add(u, hat_t), ln0);
    auto ff = dropout(pwff(m, p.pwff), keep_prob, rng, training);
    return layer_norm(add(ff, m), ln1);
}

namespace detail {

// Fused hard selection with straight-through gradients. Forward copies the
// selected stream's rows bit-exactly. Backward routes the output gradient to
// the selected stream directly and to the gate tensor (the soft relaxation)
// via per-row dot products, so gradient reaches both streams through gamma.
template <typename S>
TensorT<S> nominated_mix(const TensorT<S>& z_tr, const TensorT<S>& z_ts, const TensorT<S>& gate,
                         const std::vector<int>& selected) {
    const size_t rows = z_tr.dim(0), cols = z_tr.dim(1);
    auto an = z_tr.node();
    auto bn = z_ts.node();
    auto gn = gate.node();
    auto rn = dsct::detail::make_result<S>({rows, cols}, {an, bn, gn});
    for (size_t i = 0; i < rows; ++i) {
        const auto& src = selected[i] == 0 ? an->data : bn->data;
        std::copy_n(src.begin() + i * cols, cols, rn->data.begin() + i * cols);
    }
    if (rn->requires_grad) {
        rn->backward_fn = [an, bn, gn, selected, rows, cols](NodeT<S>& r) {
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (gn->requires_grad) gn->ensure_grad();
            for (size_t i = 0; i < rows; ++i) {
                S dot_r = S(0), dot_s = S(0);
                for (size_t j = 0; j < cols; ++j) {
                    const size_t idx = i * cols + j;
                    const S g = r.grad[idx];
                    if (selected[i] == 0) {
                        if (an->requires_grad) an->grad[idx] += g;
                    } else {
                        if (bn->requires_grad) bn->grad[idx] += g;
                    }
                    dot_r += g * an->data[idx];
                    dot_s += g * bn->data[idx];
                }
                if (gn->requires_grad) {
                    gn->grad[i * 2 + 0] += dot_r;
                    gn->grad[i * 2 + 1] += dot_s;
                }
            }
        };
    }
    return TensorT<S>(rn);
}

} // namespace detail

enum class NominationPath {
    Hard, // shipped forward path: one-hot selection, straight-through backward
    Soft  // differentiable surrogate used by gradient checks
};

template <typename S>
struct DnmResult {
    TensorT<S> z_next;
    NominationMapT<S> psi;
    TensorT<S> gamma; // seq × 2 logits before noise
};

template <typename S>
DnmResult<S> dnm_nominate(const TensorT<S>& z_tr, const TensorT<S>& z_ts,
                          const DndLayerParamsT<S>& p, const GumbelConfig& g, Rng& rng,
                          bool training, NominationPath path = NominationPath::Hard) {
    if (!(g.temperature > 0))
        throw ContractError("dnm: temperature must be positive, got " + std::to_string(g.temperature));
    if (z_tr.shape() != z_ts.shape())
        throw ShapeError("dnm: stream shapes differ: " + shape_str(z_tr.shape()) + " vs " +
                         shape_str(z_ts.shape()));
    const size_t rows = z_tr.dim(0);

    auto gamma = add(matmul(add(z_tr, z_ts), p.dnm_w), p.dnm_b);

    // training perturbs the logits with i.i.d. Gumbel(0,1) noise; inference never does
    auto logits = gamma;
    if (training && g.train_noise) {
        auto noise = TensorT<S>::zeros({rows, 2});
        for (auto& v : noise.values_mut()) v = S(rng.gumbel());
        logits = add(gamma, noise);
    }

    auto soft = softmax(scale(logits, S(1.0 / g.temperature)), 1);

    // hard one-hot from the (possibly noised) logits; ties go to region (index 0)
    std::vector<int> selected = argmax_rows(logits);
    std::vector<S> hard(rows * 2, S(0));
    for (size_t i = 0; i < rows; ++i) hard[i * 2 + size_t(selected[i])] = S(1);

    DnmResult<S> out;
    out.gamma = gamma;
    out.psi.psi = TensorT<S>::from({rows, 2}, hard);
    if (path == NominationPath::Soft) {
        // z = z_tr ⊙ soft₀ + z_ts ⊙ soft₁, fully differentiable
        auto column = [rows](const TensorT<S>& m, size_t c) {
            auto s = slice_cols(m, c, 1); // [rows,1] → [rows]
            auto sn = s.node();
            auto rn = dsct::detail::make_result<S>({rows}, {sn});
            rn->data = sn->data;
            if (rn->requires_grad)
                rn->backward_fn = [sn](NodeT<S>& r) {
                    sn->ensure_grad();
                    for (size_t i = 0; i < r.grad.size(); ++i) sn->grad[i] += r.grad[i];
                };
            return TensorT<S>(rn);
        };
        out.z_next = add(scale_rows(z_tr, column(soft, 0)), scale_rows(z_ts, column(soft, 1)));
    } else {
        auto st = straight_through(soft, hard);
        out.z_next = detail::nominated_mix(z_tr, z_ts, st, selected);
    }
    return out;
}

// one decoder layer: text self-attention, both cross-attention branches, fusion
template <typename S>
struct DecodeLayerResult {
    TensorT<S> z_next;
    NominationMapT<S> psi; // empty tensor unless Dnm fusion
};

template <typename S>
DecodeLayerResult<S> decode_layer(const TensorT<S>& z_t, const StreamPairT<S>& streams,
                                  const DndLayerParamsT<S>& p, FusionMode mode,
                                  const GumbelConfig& g, double keep_prob, Rng& rng, bool training,
                                  NominationPath path = NominationPath::Hard) {
    auto hat = text_self_attend(z_t, p, keep_prob, rng, training);
    auto z_tr = cross_attend_stream(hat, streams.z_r, p, StreamKind::Region, keep_prob, rng, training);
    auto z_ts = cross_attend_stream(hat, streams.z_s, p, StreamKind::Segmentation, keep_prob, rng, training);
    DecodeLayerResult<S> out;
    switch (mode) {
    case FusionMode::Dnm: {
        auto r = dnm_nominate(z_tr, z_ts, p, g, rng, training, path);
        out.z_next = r.z_next;
        out.psi = r.psi;
        break;
    }
    case FusionMode::Add:
        out.z_next = add(z_tr, z_ts);
        break;
    case FusionMode::Concat:
        out.z_next = matmul(concat_cols<S>({z_tr, z_ts}), p.concat_w);
        break;
    }
    return out;
}

template <typename S>
struct DecodeStackResult {
    TensorT<S> final;
    std::vector<NominationMapT<S>> psis; // one per layer in Dnm mode
};

template <typename S>
DecodeStackResult<S> decode_stack(const TensorT<S>& tokens_embedded, const StreamPairT<S>& streams,
                                  const std::vector<DndLayerParamsT<S>>& layers, FusionMode mode,
                                  const GumbelConfig& g, double keep_prob, Rng& rng, bool training,
                                  NominationPath path = NominationPath::Hard) {
    if (layers.empty()) throw ContractError("decode_stack: need at least one layer");
    DecodeStackResult<S> out;
    auto z = tokens_embedded;
    for (const auto& layer : layers) {
        auto r = decode_layer(z, streams, layer, mode, g, keep_prob, rng, training, path);
        z = r.z_next;
        if (mode == FusionMode::Dnm) out.psis.push_back(r.psi);
    }
    out.final = z;
    return out;
}

} // namespace dsct
