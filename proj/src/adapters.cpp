#include "mfuser/adapters.hpp"

namespace mf {

AdapterMode adapter_mode_from_string(const std::string& s) {
    if (s == "mvfuser") return AdapterMode::mvfuser;
    if (s == "mvfuser_separate") return AdapterMode::mvfuser_separate;
    if (s == "self_attn_concat") return AdapterMode::self_attn_concat;
    if (s == "self_attn_separate") return AdapterMode::self_attn_separate;
    if (s == "conv_adapter") return AdapterMode::conv_adapter;
    if (s == "cross_attn_adapter") return AdapterMode::cross_attn_adapter;
    if (s == "none") return AdapterMode::none;
    throw ConfigError("unknown adapter mode: " + s);
}

std::string adapter_mode_name(AdapterMode m) {
    switch (m) {
        case AdapterMode::mvfuser: return "mvfuser";
        case AdapterMode::mvfuser_separate: return "mvfuser_separate";
        case AdapterMode::self_attn_concat: return "self_attn_concat";
        case AdapterMode::self_attn_separate: return "self_attn_separate";
        case AdapterMode::conv_adapter: return "conv_adapter";
        case AdapterMode::cross_attn_adapter: return "cross_attn_adapter";
        case AdapterMode::none: return "none";
    }
    throw ConfigError("bad adapter mode");
}

namespace {

void check_grids(const TokenSequence& a, const TokenSequence& b) {
    if (a.hp != b.hp || a.wp != b.wp)
        throw ShapeError("adapter: grid mismatch " + std::to_string(a.hp) + "x" +
                         std::to_string(a.wp) + " vs " + std::to_string(b.hp) + "x" +
                         std::to_string(b.wp));
}

class MvFuserAdapter : public Adapter {
public:
    MvFuserAdapter(ParamStore& ps, const std::string& prefix, const AdapterDims& d,
                   std::mt19937_64& rng) {
        MvFuserConfig cfg;
        cfg.d_vfm = d.d_vfm;
        cfg.d_vlm = d.d_vlm;
        cfg.d_low = d.d_low;
        cfg.d_state = d.d_state;
        blk_ = make_mvfuser(ps, prefix, cfg, rng);
    }
    AdapterOffsets offsets(const TokenSequence& v, const TokenSequence& l) const override {
        auto [dv, dl] = fuse(v, l, blk_);
        return {dv, dl};
    }
    int64_t param_count() const override { return mvfuser_param_count(blk_.cfg); }
    uint64_t flop_count(int64_t T) const override { return mvfuser_flop_count(blk_.cfg, T); }
    std::string name() const override { return "mvfuser"; }
    const MvFuserBlock& block() const { return blk_; }

private:
    MvFuserBlock blk_;
};

class SeparateMvFuserAdapter : public Adapter {
public:
    SeparateMvFuserAdapter(ParamStore& ps, const std::string& prefix, const AdapterDims& d,
                           std::mt19937_64& rng)
        : vfm_(make_single_mvfuser(ps, prefix + ".vfm", d.d_vfm, d.d_low, d.d_state, rng)),
          vlm_(make_single_mvfuser(ps, prefix + ".vlm", d.d_vlm, d.d_low, d.d_state, rng)) {}
    AdapterOffsets offsets(const TokenSequence& v, const TokenSequence& l) const override {
        check_grids(v, l);
        return {single_mvfuser_offsets(v, vfm_), single_mvfuser_offsets(l, vlm_)};
    }
    int64_t param_count() const override {
        return single_mvfuser_param_count(vfm_) + single_mvfuser_param_count(vlm_);
    }
    uint64_t flop_count(int64_t T) const override {
        return single_mvfuser_flop_count(vfm_, T) + single_mvfuser_flop_count(vlm_, T);
    }
    std::string name() const override { return "mvfuser_separate"; }

private:
    SingleMvFuser vfm_, vlm_;
};

// attn(q,k,v = concat(F_VFM, F_VLM)) in a bottleneck, zero-init output maps.
class SelfAttnConcatAdapter : public Adapter {
public:
    SelfAttnConcatAdapter(ParamStore& ps, const std::string& prefix, const AdapterDims& d,
                          std::mt19937_64& rng)
        : dims_(d),
          ln_vfm_(make_layer_norm(ps, prefix + ".ln_vfm", d.d_vfm, true)),
          ln_vlm_(make_layer_norm(ps, prefix + ".ln_vlm", d.d_vlm, true)),
          down_vfm_(make_linear(ps, prefix + ".down_vfm", d.d_vfm, d.d_low, rng, true)),
          down_vlm_(make_linear(ps, prefix + ".down_vlm", d.d_vlm, d.d_low, rng, true)),
          attn_(make_mha(ps, prefix + ".attn", d.d_low, 1, rng, true)),
          up_vfm_(make_linear(ps, prefix + ".up_vfm", d.d_low, d.d_vfm, rng, true, true)),
          up_vlm_(make_linear(ps, prefix + ".up_vlm", d.d_low, d.d_vlm, rng, true, true)) {}

    AdapterOffsets offsets(const TokenSequence& v, const TokenSequence& l) const override {
        check_grids(v, l);
        const int64_t T = v.tokens.dim(0);
        Tensor x = concat_rows({down_vfm_(ln_vfm_(v.tokens)), down_vlm_(ln_vlm_(l.tokens))});
        Tensor y = mha_forward(attn_, x, x);
        return {up_vfm_(slice_rows(y, 0, T)), up_vlm_(slice_rows(y, T, 2 * T))};
    }
    int64_t param_count() const override {
        const auto& d = dims_;
        return 2 * d.d_vfm + 2 * d.d_vlm + (d.d_vfm + 1) * d.d_low +
               (d.d_vlm + 1) * d.d_low + 4 * (d.d_low + 1) * d.d_low +
               (d.d_low + 1) * d.d_vfm + (d.d_low + 1) * d.d_vlm;
    }
    uint64_t flop_count(int64_t T) const override {
        const auto& d = dims_;
        const uint64_t t = static_cast<uint64_t>(T), dl = d.d_low;
        uint64_t f = t * d.d_vfm * dl + t * d.d_vlm * dl;   // down
        f += 3 * (2 * t) * dl * dl;                         // q, k, v
        f += 2 * (2 * t) * (2 * t) * dl;                    // scores + weighted sum
        f += (2 * t) * dl * dl;                             // output projection
        f += t * dl * d.d_vfm + t * dl * d.d_vlm;           // up
        return f;
    }
    std::string name() const override { return "self_attn_concat"; }

private:
    AdapterDims dims_;
    LayerNormParams ln_vfm_, ln_vlm_;
    Linear down_vfm_, down_vlm_;
    Mha attn_;
    Linear up_vfm_, up_vlm_;
};

// Two directed cross-attentions: attn(q=F_VFM, kv=F_VLM) refines the VFM
// stream and vice versa. Roughly twice the parameters of the concat form.
class SelfAttnSeparateAdapter : public Adapter {
public:
    SelfAttnSeparateAdapter(ParamStore& ps, const std::string& prefix, const AdapterDims& d,
                            std::mt19937_64& rng)
        : dims_(d) {
        build_unit(ps, prefix + ".v_from_l", d.d_vfm, d.d_vlm, rng, unit_vfm_);
        build_unit(ps, prefix + ".l_from_v", d.d_vlm, d.d_vfm, rng, unit_vlm_);
    }

    AdapterOffsets offsets(const TokenSequence& v, const TokenSequence& l) const override {
        check_grids(v, l);
        return {run_unit(unit_vfm_, v.tokens, l.tokens),
                run_unit(unit_vlm_, l.tokens, v.tokens)};
    }
    int64_t param_count() const override {
        return unit_params(dims_.d_vfm, dims_.d_vlm) + unit_params(dims_.d_vlm, dims_.d_vfm);
    }
    uint64_t flop_count(int64_t T) const override {
        return unit_flops(T, dims_.d_vfm, dims_.d_vlm) +
               unit_flops(T, dims_.d_vlm, dims_.d_vfm);
    }
    std::string name() const override { return "self_attn_separate"; }

private:
    struct Unit {
        LayerNormParams ln_q, ln_kv;
        Linear down_q, down_kv;
        Mha attn;
        Linear up;
    };

    void build_unit(ParamStore& ps, const std::string& prefix, int64_t dq, int64_t dkv,
                    std::mt19937_64& rng, Unit& u) {
        u.ln_q = make_layer_norm(ps, prefix + ".ln_q", dq, true);
        u.ln_kv = make_layer_norm(ps, prefix + ".ln_kv", dkv, true);
        u.down_q = make_linear(ps, prefix + ".down_q", dq, dims_.d_low, rng, true);
        u.down_kv = make_linear(ps, prefix + ".down_kv", dkv, dims_.d_low, rng, true);
        u.attn = make_mha(ps, prefix + ".attn", dims_.d_low, 1, rng, true);
        u.up = make_linear(ps, prefix + ".up", dims_.d_low, dq, rng, true, true);
    }
    Tensor run_unit(const Unit& u, const Tensor& q_tokens, const Tensor& kv_tokens) const {
        Tensor q = u.down_q(u.ln_q(q_tokens));
        Tensor kv = u.down_kv(u.ln_kv(kv_tokens));
        return u.up(mha_forward(u.attn, q, kv));
    }
    int64_t unit_params(int64_t dq, int64_t dkv) const {
        const int64_t dl = dims_.d_low;
        return 2 * dq + 2 * dkv + (dq + 1) * dl + (dkv + 1) * dl + 4 * (dl + 1) * dl +
               (dl + 1) * dq;
    }
    uint64_t unit_flops(int64_t T, int64_t dq, int64_t dkv) const {
        const uint64_t t = static_cast<uint64_t>(T), dl = dims_.d_low;
        uint64_t f = t * dq * dl + t * dkv * dl;  // down
        f += 3 * t * dl * dl;                     // q, k, v
        f += 2 * t * t * dl;                      // scores + weighted sum
        f += t * dl * dl;                         // output projection
        f += t * dl * dq;                         // up
        return f;
    }

    AdapterDims dims_;
    Unit unit_vfm_, unit_vlm_;
};

// Spatial-branch-only baseline: bottleneck, depthwise 2-D conv, SiLU, up.
class ConvAdapter : public Adapter {
public:
    ConvAdapter(ParamStore& ps, const std::string& prefix, const AdapterDims& d,
                std::mt19937_64& rng)
        : dims_(d),
          ln_vfm_(make_layer_norm(ps, prefix + ".ln_vfm", d.d_vfm, true)),
          ln_vlm_(make_layer_norm(ps, prefix + ".ln_vlm", d.d_vlm, true)),
          down_vfm_(make_linear(ps, prefix + ".down_vfm", d.d_vfm, d.d_low, rng, true)),
          down_vlm_(make_linear(ps, prefix + ".down_vlm", d.d_vlm, d.d_low, rng, true)),
          kernel_(ps.trainable(prefix + ".conv",
                               {9, d.d_low},
                               Tensor::randn({9, d.d_low}, rng, 1.0 / 3.0).vec())),
          up_vfm_(make_linear(ps, prefix + ".up_vfm", d.d_low, d.d_vfm, rng, true, true)),
          up_vlm_(make_linear(ps, prefix + ".up_vlm", d.d_low, d.d_vlm, rng, true, true)) {}

    AdapterOffsets offsets(const TokenSequence& v, const TokenSequence& l) const override {
        check_grids(v, l);
        Tensor sv = silu(conv2d_depthwise(down_vfm_(ln_vfm_(v.tokens)), v.hp, v.wp, kernel_, 3));
        Tensor sl = silu(conv2d_depthwise(down_vlm_(ln_vlm_(l.tokens)), l.hp, l.wp, kernel_, 3));
        return {up_vfm_(sv), up_vlm_(sl)};
    }
    int64_t param_count() const override {
        const auto& d = dims_;
        return 2 * d.d_vfm + 2 * d.d_vlm + (d.d_vfm + 1) * d.d_low +
               (d.d_vlm + 1) * d.d_low + 9 * d.d_low + (d.d_low + 1) * d.d_vfm +
               (d.d_low + 1) * d.d_vlm;
    }
    uint64_t flop_count(int64_t T) const override {
        const auto& d = dims_;
        const uint64_t t = static_cast<uint64_t>(T);
        return t * d.d_vfm * d.d_low + t * d.d_vlm * d.d_low + 2 * t * 9 * d.d_low +
               t * d.d_low * d.d_vfm + t * d.d_low * d.d_vlm;
    }
    std::string name() const override { return "conv_adapter"; }

private:
    AdapterDims dims_;
    LayerNormParams ln_vfm_, ln_vlm_;
    Linear down_vfm_, down_vlm_;
    Tensor kernel_;
    Linear up_vfm_, up_vlm_;
};

// A fixed set of learnable tokens mediates the interaction: tokens gather
// from all patches, patches then read back from the tokens. Linear in T.
class CrossAttnAdapter : public Adapter {
public:
    CrossAttnAdapter(ParamStore& ps, const std::string& prefix, const AdapterDims& d,
                     std::mt19937_64& rng)
        : dims_(d),
          ln_vfm_(make_layer_norm(ps, prefix + ".ln_vfm", d.d_vfm, true)),
          ln_vlm_(make_layer_norm(ps, prefix + ".ln_vlm", d.d_vlm, true)),
          down_vfm_(make_linear(ps, prefix + ".down_vfm", d.d_vfm, d.d_low, rng, true)),
          down_vlm_(make_linear(ps, prefix + ".down_vlm", d.d_vlm, d.d_low, rng, true)),
          tokens_(ps.trainable(prefix + ".tokens",
                               {d.learnable_tokens, d.d_low},
                               Tensor::randn({d.learnable_tokens, d.d_low}, rng, 0.02).vec())),
          gather_(make_mha(ps, prefix + ".gather", d.d_low, 1, rng, true)),
          scatter_(make_mha(ps, prefix + ".scatter", d.d_low, 1, rng, true)),
          up_vfm_(make_linear(ps, prefix + ".up_vfm", d.d_low, d.d_vfm, rng, true, true)),
          up_vlm_(make_linear(ps, prefix + ".up_vlm", d.d_low, d.d_vlm, rng, true, true)) {}

    AdapterOffsets offsets(const TokenSequence& v, const TokenSequence& l) const override {
        check_grids(v, l);
        const int64_t T = v.tokens.dim(0);
        Tensor x = concat_rows({down_vfm_(ln_vfm_(v.tokens)), down_vlm_(ln_vlm_(l.tokens))});
        Tensor summary = add(tokens_, mha_forward(gather_, tokens_, x));
        Tensor y = mha_forward(scatter_, x, summary);
        return {up_vfm_(slice_rows(y, 0, T)), up_vlm_(slice_rows(y, T, 2 * T))};
    }
    int64_t param_count() const override {
        const auto& d = dims_;
        return 2 * d.d_vfm + 2 * d.d_vlm + (d.d_vfm + 1) * d.d_low +
               (d.d_vlm + 1) * d.d_low + d.learnable_tokens * d.d_low +
               8 * (d.d_low + 1) * d.d_low + (d.d_low + 1) * d.d_vfm +
               (d.d_low + 1) * d.d_vlm;
    }
    uint64_t flop_count(int64_t T) const override {
        const auto& d = dims_;
        const uint64_t t = static_cast<uint64_t>(T), dl = d.d_low,
                       m = d.learnable_tokens;
        uint64_t f = t * d.d_vfm * dl + t * d.d_vlm * dl;
        f += (m + 2 * t) * dl * dl * 2 + 2 * m * (2 * t) * dl;  // gather
        f += (2 * t + m) * dl * dl * 2 + 2 * (2 * t) * m * dl;  // scatter
        f += t * dl * d.d_vfm + t * dl * d.d_vlm;
        return f;
    }
    std::string name() const override { return "cross_attn_adapter"; }

private:
    AdapterDims dims_;
    LayerNormParams ln_vfm_, ln_vlm_;
    Linear down_vfm_, down_vlm_;
    Tensor tokens_;
    Mha gather_, scatter_;
    Linear up_vfm_, up_vlm_;
};

}  // namespace

std::unique_ptr<Adapter> make_adapter(AdapterMode mode, ParamStore& ps,
                                      const std::string& prefix, const AdapterDims& dims,
                                      std::mt19937_64& rng) {
    switch (mode) {
        case AdapterMode::mvfuser:
            return std::make_unique<MvFuserAdapter>(ps, prefix, dims, rng);
        case AdapterMode::mvfuser_separate:
            return std::make_unique<SeparateMvFuserAdapter>(ps, prefix, dims, rng);
        case AdapterMode::self_attn_concat:
            return std::make_unique<SelfAttnConcatAdapter>(ps, prefix, dims, rng);
        case AdapterMode::self_attn_separate:
            return std::make_unique<SelfAttnSeparateAdapter>(ps, prefix, dims, rng);
        case AdapterMode::conv_adapter:
            return std::make_unique<ConvAdapter>(ps, prefix, dims, rng);
        case AdapterMode::cross_attn_adapter:
            return std::make_unique<CrossAttnAdapter>(ps, prefix, dims, rng);
        case AdapterMode::none:
            throw ConfigError("make_adapter: mode 'none' has no adapter instance");
    }
    throw ConfigError("make_adapter: bad mode");
}

}  // namespace mf
