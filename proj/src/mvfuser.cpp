#include "mfuser/mvfuser.hpp"

#include <cmath>

namespace mf {

namespace {

Tensor make_conv_kernel(ParamStore& ps, const std::string& name, int64_t taps, int64_t d,
                        std::mt19937_64& rng) {
    Tensor k = Tensor::randn({taps, d}, rng, 1.0 / std::sqrt(static_cast<double>(taps)));
    return ps.trainable(name, k.shape(), k.vec());
}

}  // namespace

MvFuserBlock make_mvfuser(ParamStore& ps, const std::string& prefix,
                          const MvFuserConfig& cfg, std::mt19937_64& rng) {
    if (cfg.d_vfm < 1 || cfg.d_vlm < 1 || cfg.d_low < 1)
        throw ConfigError("make_mvfuser: positive widths required");
    MvFuserBlock b;
    b.cfg = cfg;
    b.ln_vfm = make_layer_norm(ps, prefix + ".ln_vfm", cfg.d_vfm, true);
    b.ln_vlm = make_layer_norm(ps, prefix + ".ln_vlm", cfg.d_vlm, true);
    b.down_vfm = make_linear(ps, prefix + ".down_vfm", cfg.d_vfm, cfg.d_low, rng, true);
    b.down_vlm = make_linear(ps, prefix + ".down_vlm", cfg.d_vlm, cfg.d_low, rng, true);
    b.conv_seq_k = make_conv_kernel(ps, prefix + ".conv_seq", cfg.conv_k, cfg.d_low, rng);
    b.ssm = make_ssm(ps, prefix + ".ssm", cfg.d_low, cfg.d_state, rng);
    b.conv_spa_k = make_conv_kernel(ps, prefix + ".conv_spa", cfg.spa_k * cfg.spa_k,
                                    cfg.d_low, rng);
    b.up_vfm = make_linear(ps, prefix + ".up_vfm", cfg.d_low, cfg.d_vfm, rng, true, true);
    b.up_vlm = make_linear(ps, prefix + ".up_vlm", cfg.d_low, cfg.d_vlm, rng, true, true);
    return b;
}

Tensor seq_branch(const Tensor& x_cat, const MvFuserBlock& blk) {
    Tensor c = conv1d_depthwise(x_cat, blk.conv_seq_k, /*causal=*/true);
    return scan_sequential(silu(c), blk.ssm);
}

Tensor spa_branch(const Tensor& x_cat, const MvFuserBlock& blk, int64_t hp, int64_t wp) {
    const int64_t T = hp * wp;
    if (x_cat.dim(0) != 2 * T)
        throw ShapeError("spa_branch: expected 2T rows for grid " + std::to_string(hp) +
                         "x" + std::to_string(wp));
    Tensor half_vfm = slice_rows(x_cat, 0, T);
    Tensor half_vlm = slice_rows(x_cat, T, 2 * T);
    Tensor s_vfm = conv2d_depthwise(half_vfm, hp, wp, blk.conv_spa_k, blk.cfg.spa_k);
    Tensor s_vlm = conv2d_depthwise(half_vlm, hp, wp, blk.conv_spa_k, blk.cfg.spa_k);
    return concat_rows({s_vfm, s_vlm});
}

std::pair<Tensor, Tensor> fuse(const TokenSequence& x_vfm, const TokenSequence& x_vlm,
                               const MvFuserBlock& blk) {
    if (x_vfm.hp != x_vlm.hp || x_vfm.wp != x_vlm.wp)
        throw ShapeError("fuse: grid mismatch, VFM " + std::to_string(x_vfm.hp) + "x" +
                         std::to_string(x_vfm.wp) + " vs VLM " + std::to_string(x_vlm.hp) +
                         "x" + std::to_string(x_vlm.wp));
    const int64_t T = x_vfm.hp * x_vfm.wp;
    if (x_vfm.tokens.dim(0) != T || x_vlm.tokens.dim(0) != T)
        throw ShapeError("fuse: token count does not match grid");

    // VFM tokens precede VLM tokens in the concatenated sequence.
    Tensor low_vfm = blk.down_vfm(blk.ln_vfm(x_vfm.tokens));
    Tensor low_vlm = blk.down_vlm(blk.ln_vlm(x_vlm.tokens));
    Tensor x_cat = concat_rows({low_vfm, low_vlm});

    Tensor x_seq = seq_branch(x_cat, blk);
    Tensor x_spa = spa_branch(x_cat, blk, x_vfm.hp, x_vfm.wp);
    Tensor gated = mul(x_seq, silu(x_spa));

    Tensor d_vfm = blk.up_vfm(slice_rows(gated, 0, T));
    Tensor d_vlm = blk.up_vlm(slice_rows(gated, T, 2 * T));
    return {d_vfm, d_vlm};
}

int64_t mvfuser_param_count(const MvFuserConfig& c) {
    int64_t n = 0;
    n += 2 * c.d_vfm + 2 * c.d_vlm;                          // layer norms
    n += (c.d_vfm + 1) * c.d_low + (c.d_vlm + 1) * c.d_low;  // down projections
    n += c.conv_k * c.d_low;                                 // causal conv
    n += c.d_low * c.d_state + c.d_low + c.d_low;            // A_log, dt_bias, D
    n += (c.d_low + 1) * (2 * c.d_state + c.d_low);          // B/C/delta projection
    n += c.spa_k * c.spa_k * c.d_low;                        // spatial conv
    n += (c.d_low + 1) * c.d_vfm + (c.d_low + 1) * c.d_vlm;  // up projections
    return n;
}

uint64_t mvfuser_flop_count(const MvFuserConfig& c, int64_t T) {
    const uint64_t t = static_cast<uint64_t>(T);
    uint64_t f = 0;
    f += t * c.d_vfm * c.d_low + t * c.d_vlm * c.d_low;        // down
    f += 2 * t * c.conv_k * c.d_low;                           // causal conv (2T tokens)
    f += 2 * t * c.d_low * (2 * c.d_state + c.d_low);          // B/C/delta projection
    f += scan_cost(2 * T, c.d_low, c.d_state);                 // selective scan
    f += 2 * t * c.spa_k * c.spa_k * c.d_low;                  // spatial conv
    f += 2 * t * c.d_low;                                      // gate
    f += t * c.d_low * c.d_vfm + t * c.d_low * c.d_vlm;        // up
    return f;
}

SingleMvFuser make_single_mvfuser(ParamStore& ps, const std::string& prefix,
                                  int64_t d_model, int64_t d_low, int64_t d_state,
                                  std::mt19937_64& rng) {
    SingleMvFuser b;
    b.d_model = d_model;
    b.d_low = d_low;
    b.d_state = d_state;
    b.ln = make_layer_norm(ps, prefix + ".ln", d_model, true);
    b.down = make_linear(ps, prefix + ".down", d_model, d_low, rng, true);
    b.conv_seq_k = make_conv_kernel(ps, prefix + ".conv_seq", b.conv_k, d_low, rng);
    b.ssm = make_ssm(ps, prefix + ".ssm", d_low, d_state, rng);
    b.conv_spa_k = make_conv_kernel(ps, prefix + ".conv_spa", b.spa_k * b.spa_k, d_low, rng);
    b.up = make_linear(ps, prefix + ".up", d_low, d_model, rng, true, true);
    return b;
}

Tensor single_mvfuser_offsets(const TokenSequence& x, const SingleMvFuser& blk) {
    Tensor low = blk.down(blk.ln(x.tokens));
    Tensor seq = scan_sequential(silu(conv1d_depthwise(low, blk.conv_seq_k, true)), blk.ssm);
    Tensor spa = conv2d_depthwise(low, x.hp, x.wp, blk.conv_spa_k, blk.spa_k);
    return blk.up(mul(seq, silu(spa)));
}

int64_t single_mvfuser_param_count(const SingleMvFuser& b) {
    int64_t n = 0;
    n += 2 * b.d_model;
    n += (b.d_model + 1) * b.d_low;
    n += b.conv_k * b.d_low;
    n += b.d_low * b.d_state + 2 * b.d_low;
    n += (b.d_low + 1) * (2 * b.d_state + b.d_low);
    n += b.spa_k * b.spa_k * b.d_low;
    n += (b.d_low + 1) * b.d_model;
    return n;
}

uint64_t single_mvfuser_flop_count(const SingleMvFuser& b, int64_t T) {
    const uint64_t t = static_cast<uint64_t>(T);
    uint64_t f = 0;
    f += t * b.d_model * b.d_low;
    f += t * b.conv_k * b.d_low;
    f += t * b.d_low * (2 * b.d_state + b.d_low);
    f += scan_cost(T, b.d_low, b.d_state);
    f += t * b.spa_k * b.spa_k * b.d_low;
    f += t * b.d_low;
    f += t * b.d_low * b.d_model;
    return f;
}

}  // namespace mf
