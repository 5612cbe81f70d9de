#include "mfuser/mtenhancer.hpp"

#include <cmath>

namespace mf {

EnhancerMode enhancer_mode_from_string(const std::string& s) {
    if (s == "full") return EnhancerMode::full;
    if (s == "no_enhance") return EnhancerMode::no_enhance;
    if (s == "no_hybrid") return EnhancerMode::no_hybrid;
    if (s == "cross_attention") return EnhancerMode::cross_attention;
    throw ConfigError("unknown enhancer mode: " + s);
}

std::string enhancer_mode_name(EnhancerMode m) {
    switch (m) {
        case EnhancerMode::full: return "full";
        case EnhancerMode::no_enhance: return "no_enhance";
        case EnhancerMode::no_hybrid: return "no_hybrid";
        case EnhancerMode::cross_attention: return "cross_attention";
    }
    throw ConfigError("bad enhancer mode");
}

MtEnhancer make_mtenhancer(ParamStore& ps, const std::string& prefix, int64_t d_t,
                           int64_t heads, int64_t d_state, std::mt19937_64& rng,
                           int64_t repeats) {
    if (repeats < 1) throw ConfigError("make_mtenhancer: repeats must be >= 1");
    MtEnhancer e;
    e.d_t = d_t;
    e.d_inner = 2 * d_t;
    e.repeats = repeats;
    e.ln_attn = make_layer_norm(ps, prefix + ".ln_attn", d_t, true);
    e.attn = make_mha(ps, prefix + ".attn", d_t, heads, rng, true, /*zero_out=*/true);
    e.ln_mamba = make_layer_norm(ps, prefix + ".ln_mamba", d_t, true);
    e.in_proj = make_linear(ps, prefix + ".in_proj", d_t, 2 * e.d_inner, rng, true);
    Tensor k = Tensor::randn({4, e.d_inner}, rng, 0.5);
    e.conv_k = ps.trainable(prefix + ".conv", k.shape(), k.vec());
    e.ssm = make_ssm(ps, prefix + ".ssm", e.d_inner, d_state, rng);
    e.out_proj = make_linear(ps, prefix + ".out_proj", e.d_inner, d_t, rng, true, true);
    e.ln_cross = make_layer_norm(ps, prefix + ".ln_cross", d_t, true);
    e.cross = make_mha(ps, prefix + ".cross", d_t, heads, rng, true, /*zero_out=*/true);
    e.ln_mlp = make_layer_norm(ps, prefix + ".ln_mlp", d_t, true);
    e.mlp = make_mlp(ps, prefix + ".mlp", d_t, 4 * d_t, rng, true, /*zero_out=*/true);
    return e;
}

Tensor class_self_attention(const Tensor& q, const MtEnhancer& e) {
    Tensor n = e.ln_attn(q);
    return add(q, mha_forward(e.attn, n, n));
}

Tensor conditional_mamba_raw(const Tensor& q, const Tensor& x_v, const MtEnhancer& e) {
    if (q.cols() != e.d_t || x_v.cols() != e.d_t)
        throw ShapeError("conditional_mamba: width mismatch, queries " +
                         shape_str(q.shape()) + " visual " + shape_str(x_v.shape()) +
                         " expected width " + std::to_string(e.d_t));
    // two copies of the text queries flank the visual tokens
    Tensor s = e.ln_mamba(concat_rows({q, x_v, q}));
    Tensor u = e.in_proj(s);
    Tensor val = slice_cols(u, 0, e.d_inner);
    Tensor gate = slice_cols(u, e.d_inner, 2 * e.d_inner);
    Tensor scanned = scan_sequential(silu(conv1d_depthwise(val, e.conv_k, true)), e.ssm);
    return e.out_proj(mul(scanned, silu(gate)));
}

Tensor conditional_mamba(const Tensor& q, const Tensor& x_v, const MtEnhancer& e) {
    const int64_t C = q.dim(0), Tv = x_v.dim(0);
    Tensor delta = conditional_mamba_raw(q, x_v, e);
    Tensor dq = slice_rows(delta, 0, C);
    Tensor dq_copy = slice_rows(delta, C + Tv, 2 * C + Tv);
    return add(add(q, dq), dq_copy);
}

Tensor enhancer_mlp(const Tensor& q, const MtEnhancer& e) {
    return add(q, e.mlp(e.ln_mlp(q)));
}

Tensor enhance(const Tensor& q, const Tensor& x_v, EnhancerMode mode, const MtEnhancer& e) {
    if (mode == EnhancerMode::no_enhance) return q;
    Tensor cur = q;
    for (int64_t r = 0; r < e.repeats; ++r) {
        cur = class_self_attention(cur, e);
        switch (mode) {
            case EnhancerMode::full:
                cur = conditional_mamba(cur, x_v, e);
                break;
            case EnhancerMode::no_hybrid:
                break;
            case EnhancerMode::cross_attention:
                cur = add(cur, mha_forward(e.cross, e.ln_cross(cur), x_v));
                break;
            case EnhancerMode::no_enhance:
                break;  // unreachable
        }
        cur = enhancer_mlp(cur, e);
    }
    return cur;
}

int64_t mtenhancer_param_count(const MtEnhancer& e) {
    int64_t n = 0;
    n += 2 * e.d_t + e.attn.param_count();
    n += 2 * e.d_t + e.in_proj.param_count() + e.conv_k.numel();
    n += e.ssm.A_log.numel() + e.ssm.delta_bias.numel() + e.ssm.D_skip.numel() +
         e.ssm.proj_bcd.param_count();
    n += e.out_proj.param_count();
    n += 2 * e.d_t + e.cross.param_count();
    n += 2 * e.d_t + e.mlp.param_count();
    return n;
}

}  // namespace mf
