#pragma once

// End-to-end caption models: the dual-stream DSCT (input projections, token
// embedding, PSMAE stack, DND stack, output head) and the single-stream
// transformer baseline used by the ablation harness.

#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "dsct/dnd.hpp"
#include "dsct/nn.hpp"
#include "dsct/psmae.hpp"

namespace dsct {

// reserved token ids, stable across every vocabulary
constexpr int kPad = 0;
constexpr int kBos = 1;
constexpr int kEos = 2;
constexpr int kUnk = 3;

enum class ArchVariant { Dsct, Baseline };

struct ModelConfig {
    size_t d_model = 512;
    size_t heads = 8;
    size_t enc_layers = 3;
    size_t dec_layers = 3;
    size_t d_ff = 2048;
    size_t vocab_size = 0;
    size_t max_len = 20;
    size_t feature_dim_region = 2048;
    size_t feature_dim_seg = 2048;
    double keep_prob = 0.9;
    size_t beam = 5;
    double length_norm_alpha = 0.0;
    double gumbel_temperature = 1.0;
    double gumbel_temperature_end = 1.0; // equal to start → constant; else linear anneal
    std::string fusion = "dnm";          // dnm | add | concat | baseline

    static ModelConfig desk() {
        ModelConfig c;
        c.d_model = 64;
        c.heads = 4;
        c.enc_layers = 2;
        c.dec_layers = 2;
        c.d_ff = 128;
        c.max_len = 16;
        c.feature_dim_region = 32;
        c.feature_dim_seg = 32;
        return c;
    }

    void validate() const {
        if (d_model % heads != 0)
            throw ContractError("config: d_model must be divisible by heads");
        if (beam < 1) throw ContractError("config: beam must be >= 1");
        if (max_len < 2) throw ContractError("config: max_len must be >= 2");
        if (fusion != "dnm" && fusion != "add" && fusion != "concat" && fusion != "baseline")
            throw ContractError("config: unknown fusion mode '" + fusion + "'");
        if (!(gumbel_temperature > 0) || !(gumbel_temperature_end > 0))
            throw ContractError("config: gumbel temperature must be positive");
    }

    ArchVariant variant() const { return fusion == "baseline" ? ArchVariant::Baseline : ArchVariant::Dsct; }
    FusionMode fusion_mode() const {
        if (fusion == "add") return FusionMode::Add;
        if (fusion == "concat") return FusionMode::Concat;
        return FusionMode::Dnm;
    }

    std::string to_kv() const {
        std::ostringstream os;
        os << "d_model=" << d_model << "\nheads=" << heads << "\nenc_layers=" << enc_layers
           << "\ndec_layers=" << dec_layers << "\nd_ff=" << d_ff << "\nvocab_size=" << vocab_size
           << "\nmax_len=" << max_len << "\nfeature_dim_region=" << feature_dim_region
           << "\nfeature_dim_seg=" << feature_dim_seg << "\nkeep_prob=" << keep_prob
           << "\nbeam=" << beam << "\nlength_norm_alpha=" << length_norm_alpha
           << "\ngumbel_temperature=" << gumbel_temperature
           << "\ngumbel_temperature_end=" << gumbel_temperature_end << "\nfusion=" << fusion << "\n";
        return os.str();
    }

    static ModelConfig from_kv(const std::string& text) {
        ModelConfig c;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            const std::string key = line.substr(0, eq);
            const std::string val = line.substr(eq + 1);
            if (key == "d_model") c.d_model = std::stoul(val);
            else if (key == "heads") c.heads = std::stoul(val);
            else if (key == "enc_layers") c.enc_layers = std::stoul(val);
            else if (key == "dec_layers") c.dec_layers = std::stoul(val);
            else if (key == "d_ff") c.d_ff = std::stoul(val);
            else if (key == "vocab_size") c.vocab_size = std::stoul(val);
            else if (key == "max_len") c.max_len = std::stoul(val);
            else if (key == "feature_dim_region") c.feature_dim_region = std::stoul(val);
            else if (key == "feature_dim_seg") c.feature_dim_seg = std::stoul(val);
            else if (key == "keep_prob") c.keep_prob = std::stod(val);
            else if (key == "beam") c.beam = std::stoul(val);
            else if (key == "length_norm_alpha") c.length_norm_alpha = std::stod(val);
            else if (key == "gumbel_temperature") c.gumbel_temperature = std::stod(val);
            else if (key == "gumbel_temperature_end") c.gumbel_temperature_end = std::stod(val);
            else if (key == "fusion") c.fusion = val;
        }
        return c;
    }

    bool operator==(const ModelConfig& o) const { return to_kv() == o.to_kv(); }
};

template <typename S>
struct ForwardResult {
    TensorT<S> logits;                   // seq × vocab
    std::vector<NominationMapT<S>> psis; // one per DND layer in dnm mode
};

template <typename S>
class CaptionModelT {
public:
    virtual ~CaptionModelT() = default;

    // Logits for the given decoder input positions (typically BOS w1 … w_{T-1}).
    virtual ForwardResult<S> forward_tokens(const TensorT<S>& region_feats,
                                            const TensorT<S>& seg_feats,
                                            const std::vector<int>& token_inputs, Rng& rng,
                                            bool training,
                                            NominationPath path = NominationPath::Hard) const = 0;

    virtual NamedParams<S> named_parameters() const = 0;
    virtual const ModelConfig& config() const = 0;

    // Teacher forcing: inputs are tokens[0..T−1], row t scores tokens[t+1].
    ForwardResult<S> forward_train(const TensorT<S>& region_feats, const TensorT<S>& seg_feats,
                                   const std::vector<int>& tokens, Rng& rng, bool training,
                                   NominationPath path = NominationPath::Hard) const {
        if (tokens.size() < 2 || tokens.front() != kBos)
            throw ContractError("forward_train: caption must start with BOS and contain a target");
        for (int id : tokens)
            if (id < 0 || size_t(id) >= config().vocab_size)
                throw ContractError("forward_train: token id " + std::to_string(id) +
                                    " out of range for vocab " + std::to_string(config().vocab_size));
        std::vector<int> inputs(tokens.begin(), tokens.end() - 1);
        return forward_tokens(region_feats, seg_feats, inputs, rng, training, path);
    }

    size_t parameter_count() const {
        size_t n = 0;
        for (const auto& [name, t] : named_parameters()) n += t.numel();
        return n;
    }

    void zero_grads() const {
        for (auto& [name, t] : named_parameters()) const_cast<TensorT<S>&>(t).zero_grad();
    }
};

namespace detail {

template <typename S>
struct InputProjection {
    TensorT<S> w, b;
    static InputProjection make(size_t d_in, size_t d_out, Rng& rng) {
        return {xavier_uniform<S>({d_in, d_out}, rng), TensorT<S>::zeros({d_out}).set_requires_grad()};
    }
    TensorT<S> apply(const TensorT<S>& x, double keep_prob, Rng& rng, bool training) const {
        return dropout(relu(add(matmul(x, w), b)), keep_prob, rng, training);
    }
    void collect(const std::string& prefix, NamedParams<S>& out) const {
        out.emplace_back(prefix + ".w", w);
        out.emplace_back(prefix + ".b", b);
    }
};

// token embedding scaled by sqrt(d_model), plus sinusoidal positions
template <typename S>
TensorT<S> embed_tokens(const TensorT<S>& table, const std::vector<int>& ids, const TensorT<S>& pe) {
    const size_t d = table.dim(1);
    auto emb = scale(gather_rows(table, ids), S(std::sqrt(double(d))));
    auto pos = TensorT<S>::zeros({ids.size(), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(pe.values().begin() + i * d, d, pos.values_mut().begin() + i * d);
    return add(emb, pos);
}

} // namespace detail

// ---------------------------------------------------------------------------
// DSCT: PSMAE encoder + DND decoder (fusion per config: dnm, add or concat)

template <typename S>
class DsctT : public CaptionModelT<S> {
public:
    DsctT(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.vocab_size == 0) throw ContractError("model: vocab_size must be set");
        gumbel_.temperature = cfg_.gumbel_temperature;
        region_proj_ = detail::InputProjection<S>::make(cfg_.feature_dim_region, cfg_.d_model, rng);
        seg_proj_ = detail::InputProjection<S>::make(cfg_.feature_dim_seg, cfg_.d_model, rng);
        embed_ = xavier_uniform<S>({cfg_.vocab_size, cfg_.d_model}, rng);
        for (size_t l = 0; l < cfg_.enc_layers; ++l)
            enc_.push_back(PsmaeLayerParamsT<S>::make(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng));
        for (size_t l = 0; l < cfg_.dec_layers; ++l)
            dec_.push_back(DndLayerParamsT<S>::make(cfg_.d_model, cfg_.heads, cfg_.d_ff,
                                                    cfg_.fusion_mode(), rng));
        head_w_ = xavier_uniform<S>({cfg_.d_model, cfg_.vocab_size}, rng);
        head_b_ = TensorT<S>::zeros({cfg_.vocab_size}).set_requires_grad();
        pe_ = sinusoidal_pe<S>(cfg_.max_len + 2, cfg_.d_model);
    }

    ForwardResult<S> forward_tokens(const TensorT<S>& region_feats, const TensorT<S>& seg_feats,
                                    const std::vector<int>& token_inputs, Rng& rng, bool training,
                                    NominationPath path = NominationPath::Hard) const override {
        if (token_inputs.size() > cfg_.max_len + 1)
            throw ContractError("forward: sequence longer than max_len + 1");
        StreamPairT<S> streams{region_proj_.apply(region_feats, cfg_.keep_prob, rng, training),
                               seg_proj_.apply(seg_feats, cfg_.keep_prob, rng, training)};
        streams = encode_stack(streams, enc_, cfg_.keep_prob, rng, training);
        auto z_t = detail::embed_tokens(embed_, token_inputs, pe_);
        auto decoded = decode_stack(z_t, streams, dec_, cfg_.fusion_mode(), gumbel_, cfg_.keep_prob,
                                    rng, training, path);
        ForwardResult<S> out;
        out.logits = add(matmul(decoded.final, head_w_), head_b_);
        out.psis = std::move(decoded.psis);
        return out;
    }

    NamedParams<S> named_parameters() const override {
        NamedParams<S> out;
        region_proj_.collect("region_proj", out);
        seg_proj_.collect("seg_proj", out);
        out.emplace_back("embed.table", embed_);
        for (size_t l = 0; l < enc_.size(); ++l) enc_[l].collect("psmae." + std::to_string(l), out);
        for (size_t l = 0; l < dec_.size(); ++l) dec_[l].collect("dnd." + std::to_string(l), out);
        out.emplace_back("head.w", head_w_);
        out.emplace_back("head.b", head_b_);
        return out;
    }

    const ModelConfig& config() const override { return cfg_; }

    void set_gumbel_temperature(double t) { gumbel_.temperature = t; }
    double gumbel_temperature() const { return gumbel_.temperature; }

private:
    ModelConfig cfg_;
    GumbelConfig gumbel_;
    detail::InputProjection<S> region_proj_, seg_proj_;
    TensorT<S> embed_, head_w_, head_b_, pe_;
    std::vector<PsmaeLayerParamsT<S>> enc_;
    std::vector<DndLayerParamsT<S>> dec_;
};

// ---------------------------------------------------------------------------
// single-stream transformer baseline (region features only)

template <typename S>
struct BaselineEncLayerT {
    AttentionParamsT<S> mhsa;
    PwffParamsT<S> pwff;
    LayerNormParamsT<S> ln0, ln1, ln2;

    static BaselineEncLayerT make(size_t d, size_t heads, size_t d_ff, Rng& rng) {
        return {AttentionParamsT<S>::make(d, heads, rng), PwffParamsT<S>::make(d, d_ff, rng),
                LayerNormParamsT<S>::make(d), LayerNormParamsT<S>::make(d), LayerNormParamsT<S>::make(d)};
    }
    void collect(const std::string& prefix, NamedParams<S>& out) const {
        mhsa.collect(prefix + ".mhsa", out);
        pwff.collect(prefix + ".pwff", out);
        ln0.collect(prefix + ".ln0", out);
        ln1.collect(prefix + ".ln1", out);
        ln2.collect(prefix + ".ln2", out);
    }
};

template <typename S>
struct BaselineDecLayerT {
    AttentionParamsT<S> mhsa, cross;
    PwffParamsT<S> pwff;
    LayerNormParamsT<S> ln_t0, ln_t1, ln_c0, ln_c1, ln_f0;

    static BaselineDecLayerT make(size_t d, size_t heads, size_t d_ff, Rng& rng) {
        return {AttentionParamsT<S>::make(d, heads, rng), AttentionParamsT<S>::make(d, heads, rng),
                PwffParamsT<S>::make(d, d_ff, rng),       LayerNormParamsT<S>::make(d),
                LayerNormParamsT<S>::make(d),             LayerNormParamsT<S>::make(d),
                LayerNormParamsT<S>::make(d),             LayerNormParamsT<S>::make(d)};
    }
    void collect(const std::string& prefix, NamedParams<S>& out) const {
        mhsa.collect(prefix + ".mhsa", out);
        cross.collect(prefix + ".cross", out);
        pwff.collect(prefix + ".pwff", out);
        ln_t0.collect(prefix + ".ln_t0", out);
        ln_t1.collect(prefix + ".ln_t1", out);
        ln_c0.collect(prefix + ".ln_c0", out);
        ln_c1.collect(prefix + ".ln_c1", out);
        ln_f0.collect(prefix + ".ln_f0", out);
    }
};

template <typename S>
class BaselineModelT : public CaptionModelT<S> {
public:
    BaselineModelT(ModelConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
        cfg_.validate();
        if (cfg_.vocab_size == 0) throw ContractError("model: vocab_size must be set");
        region_proj_ = detail::InputProjection<S>::make(cfg_.feature_dim_region, cfg_.d_model, rng);
        embed_ = xavier_uniform<S>({cfg_.vocab_size, cfg_.d_model}, rng);
        for (size_t l = 0; l < cfg_.enc_layers; ++l)
            enc_.push_back(BaselineEncLayerT<S>::make(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng));
        for (size_t l = 0; l < cfg_.dec_layers; ++l)
            dec_.push_back(BaselineDecLayerT<S>::make(cfg_.d_model, cfg_.heads, cfg_.d_ff, rng));
        head_w_ = xavier_uniform<S>({cfg_.d_model, cfg_.vocab_size}, rng);
        head_b_ = TensorT<S>::zeros({cfg_.vocab_size}).set_requires_grad();
        pe_ = sinusoidal_pe<S>(cfg_.max_len + 2, cfg_.d_model);
    }

    ForwardResult<S> forward_tokens(const TensorT<S>& region_feats, const TensorT<S>& /*seg*/,
                                    const std::vector<int>& token_inputs, Rng& rng, bool training,
                                    NominationPath = NominationPath::Hard) const override {
        if (token_inputs.size() > cfg_.max_len + 1)
            throw ContractError("forward: sequence longer than max_len + 1");
        auto z = region_proj_.apply(region_feats, cfg_.keep_prob, rng, training);
        for (const auto& l : enc_) {
            auto att = dropout(multi_head_attention(z, z, z, l.mhsa), cfg_.keep_prob, rng, training);
            auto u = layer_norm(add(att, z), l.ln0);
            auto m = layer_norm(add(u, z), l.ln1);
            auto ff = dropout(pwff(m, l.pwff), cfg_.keep_prob, rng, training);
            z = layer_norm(add(ff, m), l.ln2);
        }
        auto t = detail::embed_tokens(embed_, token_inputs, pe_);
        for (const auto& l : dec_) {
            auto att = dropout(masked_self_attention(t, l.mhsa), cfg_.keep_prob, rng, training);
            auto u = layer_norm(add(att, t), l.ln_t0);
            auto th = layer_norm(add(u, t), l.ln_t1);
            auto catt = dropout(multi_head_attention(th, z, z, l.cross), cfg_.keep_prob, rng, training);
            auto cu = layer_norm(add(catt, th), l.ln_c0);
            auto tt = layer_norm(add(cu, th), l.ln_c1);
            auto ff = dropout(pwff(tt, l.pwff), cfg_.keep_prob, rng, training);
            t = layer_norm(add(ff, tt), l.ln_f0);
        }
        ForwardResult<S> out;
        out.logits = add(matmul(t, head_w_), head_b_);
        return out;
    }

    NamedParams<S> named_parameters() const override {
        NamedParams<S> out;
        region_proj_.collect("region_proj", out);
        out.emplace_back("embed.table", embed_);
        for (size_t l = 0; l < enc_.size(); ++l) enc_[l].collect("enc." + std::to_string(l), out);
        for (size_t l = 0; l < dec_.size(); ++l) dec_[l].collect("dec." + std::to_string(l), out);
        out.emplace_back("head.w", head_w_);
        out.emplace_back("head.b", head_b_);
        return out;
    }

    const ModelConfig& config() const override { return cfg_; }

private:
    ModelConfig cfg_;
    detail::InputProjection<S> region_proj_;
    TensorT<S> embed_, head_w_, head_b_, pe_;
    std::vector<BaselineEncLayerT<S>> enc_;
    std::vector<BaselineDecLayerT<S>> dec_;
};

// z_tr + z_ts, or (z_tr ∥ z_ts)·W_c; the standalone fusion used by the ablations
template <typename S>
TensorT<S> fuse_variant(FusionMode mode, const TensorT<S>& z_tr, const TensorT<S>& z_ts,
                        const TensorT<S>& projection = TensorT<S>()) {
    switch (mode) {
    case FusionMode::Add:
        return add(z_tr, z_ts);
    case FusionMode::Concat:
        return matmul(concat_cols<S>({z_tr, z_ts}), projection);
    default:
        throw ContractError("fuse_variant: mode must be add or concat");
    }
}

template <typename S>
std::unique_ptr<CaptionModelT<S>> make_model(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.variant() == ArchVariant::Baseline)
        return std::make_unique<BaselineModelT<S>>(cfg, rng);
    return std::make_unique<DsctT<S>>(cfg, rng);
}

} // namespace dsct
