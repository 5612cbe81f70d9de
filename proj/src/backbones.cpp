#include "mfuser/backbones.hpp"

#include <algorithm>
#include <cmath>

namespace mf {

FrozenEncoder make_frozen_encoder(ParamStore& ps, const std::string& prefix,
                                  const EncoderConfig& cfg) {
    FrozenEncoder enc;
    enc.cfg = cfg;
    std::mt19937_64 rng(cfg.seed);
    const int64_t pdim = cfg.patch_size * cfg.patch_size * 3;
    enc.patch_embed = make_linear(ps, prefix + ".patch", pdim, cfg.width, rng, false);
    enc.blocks.resize(cfg.depth);
    for (int64_t i = 0; i < cfg.depth; ++i) {
        std::string bp = prefix + ".block" + std::to_string(i);
        auto& b = enc.blocks[i];
        b.ln1 = make_layer_norm(ps, bp + ".ln1", cfg.width, false);
        b.attn = make_mha(ps, bp + ".attn", cfg.width, cfg.heads, rng, false);
        b.ln2 = make_layer_norm(ps, bp + ".ln2", cfg.width, false);
        b.mlp = make_mlp(ps, bp + ".mlp", cfg.width, 4 * cfg.width, rng, false);
    }
    return enc;
}

Tensor sinusoidal_positions(int64_t T, int64_t width) {
    Tensor pos = Tensor::zeros({T, width});
    for (int64_t t = 0; t < T; ++t)
        for (int64_t j = 0; j < width; j += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(j) / width);
            pos.data()[t * width + j] = std::sin(t * freq);
            if (j + 1 < width) pos.data()[t * width + j + 1] = std::cos(t * freq);
        }
    return pos;
}

TokenSequence tokenize(const Tensor& image, const FrozenEncoder& enc) {
    if (image.shape().size() != 3 || image.dim(2) != 3)
        throw ShapeError("tokenize: [H x W x 3] image required, got " +
                         shape_str(image.shape()));
    const int64_t H = image.dim(0), W = image.dim(1), ps = enc.cfg.patch_size;
    if (H % ps != 0 || W % ps != 0)
        throw ShapeError("tokenize: image " + std::to_string(H) + "x" + std::to_string(W) +
                         " not divisible by patch size " + std::to_string(ps));
    const int64_t hp = H / ps, wp = W / ps, T = hp * wp, pdim = ps * ps * 3;
    Tensor patches = Tensor::zeros({T, pdim});
    for (int64_t pi = 0; pi < hp; ++pi)
        for (int64_t pj = 0; pj < wp; ++pj) {
            double* row = patches.data() + (pi * wp + pj) * pdim;
            for (int64_t u = 0; u < ps; ++u)
                for (int64_t v = 0; v < ps; ++v)
                    for (int64_t c = 0; c < 3; ++c)
                        row[(u * ps + v) * 3 + c] =
                            image.data()[((pi * ps + u) * W + (pj * ps + v)) * 3 + c];
        }
    Tensor tokens = add(enc.patch_embed(patches), sinusoidal_positions(T, enc.cfg.width));
    return {tokens, hp, wp, enc.cfg.tag};
}

Tensor encoder_block_forward(const Tensor& x, const EncoderBlockParams& blk) {
    Tensor n1 = blk.ln1(x);
    Tensor a = add(x, mha_forward(blk.attn, n1, n1));
    return add(a, blk.mlp(blk.ln2(a)));
}

TokenSequence encoder_forward(const Tensor& image, const FrozenEncoder& enc) {
    TokenSequence seq = tokenize(image, enc);
    for (const auto& blk : enc.blocks) seq.tokens = encoder_block_forward(seq.tokens, blk);
    return seq;
}

int64_t adapter_slots(int64_t depth, int64_t stride) {
    if (stride < 1) throw ConfigError("adapter stride must be >= 1");
    return depth / stride;
}

AdaptedFeatures forward_with_adapters(const Tensor& image, const FrozenEncoder& vfm,
                                      const FrozenEncoder& vlm,
                                      const std::vector<const Adapter*>& adapters,
                                      int64_t stride) {
    const int64_t Nv = vfm.cfg.depth, Nl = vlm.cfg.depth;
    const int64_t slots = adapter_slots(Nv, stride);
    if (!adapters.empty() && static_cast<int64_t>(adapters.size()) != slots)
        throw ConfigError("adapter count " + std::to_string(adapters.size()) +
                          " does not match attach points " + std::to_string(slots) +
                          " (depth " + std::to_string(Nv) + ", stride " +
                          std::to_string(stride) + ")");
    TokenSequence xv = tokenize(image, vfm);
    TokenSequence xl = tokenize(image, vlm);
    if (xv.hp != xl.hp || xv.wp != xl.wp)
        throw ShapeError("forward_with_adapters: encoders disagree on patch grid");

    AdaptedFeatures out;
    // pyramid taps at quarter depths of the VFM stream
    std::vector<int64_t> taps = {Nv / 4, Nv / 2, 3 * Nv / 4, Nv};
    size_t next_adapter = 0;
    int64_t jl = 0;  // VLM layers consumed so far (floor-proportional lockstep)
    for (int64_t i = 1; i <= Nv; ++i) {
        xv.tokens = encoder_block_forward(xv.tokens, vfm.blocks[i - 1]);
        int64_t jl_target = i * Nl / Nv;
        for (; jl < jl_target; ++jl)
            xl.tokens = encoder_block_forward(xl.tokens, vlm.blocks[jl]);
        if (!adapters.empty() && i % stride == 0) {
            AdapterOffsets d = adapters[next_adapter++]->offsets(xv, xl);
            xv.tokens = add(xv.tokens, d.d_vfm);
            xl.tokens = add(xl.tokens, d.d_vlm);
        }
        if (std::find(taps.begin(), taps.end(), i) != taps.end()) {
            out.pyramid_vfm.push_back(xv);
            out.pyramid_vlm.push_back(xl);
        }
    }
    out.vfm_final = xv;
    out.vlm_final = xl;
    return out;
}

// ---- toy text encoder ------------------------------------------------

ToyTextEncoder make_toy_text_encoder(ParamStore& ps, const std::string& prefix,
                                     int64_t d_t, int64_t n_prompts, uint64_t seed,
                                     Tensor shared_head) {
    ToyTextEncoder enc;
    enc.vocabulary = {"background", "disk", "square", "stripe",
                      "object",     "region", "texture", "shape"};
    std::mt19937_64 rng(seed);
    enc.embed = ps.frozen(prefix + ".embed",
                          Tensor::randn({static_cast<int64_t>(enc.vocabulary.size()), d_t},
                                        rng, 1.0));
    if (n_prompts > 0) {
        Tensor p = Tensor::randn({n_prompts, d_t}, rng, 0.02);
        enc.prompts = ps.trainable(prefix + ".prompts", p.shape(), p.vec());
    }
    enc.head = shared_head;
    return enc;
}

ClassQuerySet encode_classes(const ToyTextEncoder& enc,
                             const std::vector<std::string>& class_names) {
    if (class_names.empty()) throw ConfigError("encode_classes: empty class list");
    const int64_t d_t = enc.embed.dim(1);
    std::vector<Tensor> rows;
    rows.reserve(class_names.size());
    for (const auto& name : class_names) {
        auto it = std::find(enc.vocabulary.begin(), enc.vocabulary.end(), name);
        if (it == enc.vocabulary.end())
            throw ConfigError("encode_classes: '" + name + "' not in vocabulary");
        int64_t idx = it - enc.vocabulary.begin();
        Tensor word = slice_rows(enc.embed, idx, idx + 1);
        Tensor pooled = enc.prompts.defined()
                            ? mean_rows(concat_rows({enc.prompts, word}))
                            : word;
        rows.push_back(pooled);
    }
    Tensor q = l2_normalize_rows(matmul(concat_rows(rows), enc.head));
    (void)d_t;
    return {q, class_names};
}

}  // namespace mf
