#pragma once

// Pattern-specific mutual attention encoder. Each layer consolidates the two
// streams with a shared self-attention + feed-forward (one parameter set for
// both streams) and private layer norms, then updates each stream by querying
// the other one with a second shared attention.

#include <string>
#include <vector>

#include "dsct/nn.hpp"

namespace dsct {

template <typename S>
struct StreamPairT {
    TensorT<S> z_r; // region sequence,       N_r × d_model
    TensorT<S> z_s; // segmentation sequence, N_s × d_model
};

template <typename S>
struct PsmaeLayerParamsT {
    // shared across both streams (the θ_rs bundle)
    AttentionParamsT<S> mhsa0; // self-attention in the consolidation step
    AttentionParamsT<S> mha1;  // cross-stream attention in the update step
    PwffParamsT<S> pwff;
    // five private layer norms per stream, indices 0..4
    std::vector<LayerNormParamsT<S>> private_r;
    std::vector<LayerNormParamsT<S>> private_s;

    static PsmaeLayerParamsT make(size_t d, size_t heads, size_t d_ff, Rng& rng) {
        PsmaeLayerParamsT p;
        p.mhsa0 = AttentionParamsT<S>::make(d, heads, rng);
        p.mha1 = AttentionParamsT<S>::make(d, heads, rng);
        p.pwff = PwffParamsT<S>::make(d, d_ff, rng);
        for (int i = 0; i < 5; ++i) {
            p.private_r.push_back(LayerNormParamsT<S>::make(d));
            p.private_s.push_back(LayerNormParamsT<S>::make(d));
        }
        return p;
    }

    void collect(const std::string& prefix, NamedParams<S>& out) const {
        mhsa0.collect(prefix + ".shared.mhsa0", out);
        mha1.collect(prefix + ".shared.mha1", out);
        pwff.collect(prefix + ".shared.pwff", out);
        for (size_t i = 0; i < private_r.size(); ++i)
            private_r[i].collect(prefix + ".private_r.ln" + std::to_string(i), out);
        for (size_t i = 0; i < private_s.size(); ++i)
            private_s[i].collect(prefix + ".private_s.ln" + std::to_string(i), out);
    }
};

namespace detail {

template <typename S>
TensorT<S> consolidate_stream(const TensorT<S>& z, const PsmaeLayerParamsT<S>& p,
                              const std::vector<LayerNormParamsT<S>>& lns, double keep_prob,
                              Rng& rng, bool training) {
    auto att = dropout(multi_head_attention(z, z, z, p.mhsa0), keep_prob, rng, training);
    auto u = layer_norm(add(att, z), lns[0]);
    auto m = layer_norm(add(u, z), lns[1]);
    auto ff = dropout(pwff(m, p.pwff), keep_prob, rng, training);
    return layer_norm(add(ff, m), lns[2]);
}

// the updated stream supplies query and residual; the other supplies key/value
template <typename S>
TensorT<S> cross_query_stream(const TensorT<S>& self, const TensorT<S>& other,
                              const PsmaeLayerParamsT<S>& p,
                              const std::vector<LayerNormParamsT<S>>& lns, double keep_prob,
                              Rng& rng, bool training) {
    auto att = dropout(multi_head_attention(self, other, other, p.mha1), keep_prob, rng, training);
    auto u = layer_norm(add(att, self), lns[3]);
    return layer_norm(add(u, self), lns[4]);
}

} // namespace detail

template <typename S>
StreamPairT<S> consolidate(const StreamPairT<S>& pair, const PsmaeLayerParamsT<S>& p,
                           double keep_prob, Rng& rng, bool training) {
    return {detail::consolidate_stream(pair.z_r, p, p.private_r, keep_prob, rng, training),
            detail::consolidate_stream(pair.z_s, p, p.private_s, keep_prob, rng, training)};
}

template <typename S>
StreamPairT<S> cross_query(const StreamPairT<S>& hat, const PsmaeLayerParamsT<S>& p,
                           double keep_prob, Rng& rng, bool training) {
    return {detail::cross_query_stream(hat.z_r, hat.z_s, p, p.private_r, keep_prob, rng, training),
            detail::cross_query_stream(hat.z_s, hat.z_r, p, p.private_s, keep_prob, rng, training)};
}

template <typename S>
StreamPairT<S> encode_stack(const StreamPairT<S>& x, const std::vector<PsmaeLayerParamsT<S>>& layers,
                            double keep_prob, Rng& rng, bool training) {
    if (layers.empty()) throw ContractError("encode_stack: need at least one layer");
    StreamPairT<S> z = x;
    for (const auto& layer : layers)
        z = cross_query(consolidate(z, layer, keep_prob, rng, training), layer, keep_prob, rng, training);
    return z;
}

} // namespace dsct
