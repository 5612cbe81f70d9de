#include "mfuser/seghead.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>

namespace mf {

AlignVariant align_variant_from_string(const std::string& s) {
    if (s == "softmax") return AlignVariant::softmax;
    if (s == "sigmoid") return AlignVariant::sigmoid;
    throw ConfigError("unknown alignment variant: " + s);
}

std::string align_variant_name(AlignVariant v) {
    return v == AlignVariant::softmax ? "softmax" : "sigmoid";
}

SegHead make_seg_head(ParamStore& ps, const std::string& prefix, int64_t n_classes,
                      int64_t d_t, int64_t d_vfm, int64_t d_vlm, int64_t levels,
                      int64_t heads, std::mt19937_64& rng, int64_t n_stages) {
    if (n_classes < 1 || levels < 1 || n_stages < 1)
        throw ConfigError("make_seg_head: classes, levels and stages must be >= 1");
    SegHead h;
    h.n_classes = n_classes;
    h.d_t = d_t;
    for (int64_t i = 0; i < levels; ++i)
        h.level_proj.push_back(make_linear(ps, prefix + ".lvl" + std::to_string(i),
                                           d_vfm + d_vlm, d_t, rng, true));
    h.ln_pix = make_layer_norm(ps, prefix + ".ln_pix", d_t, true);
    h.pixel_head = make_linear(ps, prefix + ".pixel_head", d_t, d_t, rng, true);
    for (int64_t s = 0; s < n_stages; ++s) {
        std::string sp = prefix + ".stage" + std::to_string(s);
        DecoderStage st;
        st.ln_cross = make_layer_norm(ps, sp + ".ln_cross", d_t, true);
        st.cross = make_mha(ps, sp + ".cross", d_t, heads, rng, true);
        st.ln_self = make_layer_norm(ps, sp + ".ln_self", d_t, true);
        st.self_attn = make_mha(ps, sp + ".self", d_t, heads, rng, true);
        st.ln_mlp = make_layer_norm(ps, sp + ".ln_mlp", d_t, true);
        st.mlp = make_mlp(ps, sp + ".mlp", d_t, 4 * d_t, rng, true);
        h.stages.push_back(st);
    }
    h.mask_embed = make_mlp(ps, prefix + ".mask_embed", d_t, d_t, rng, true);
    h.cls_head = make_linear(ps, prefix + ".cls_head", d_t, n_classes + 1, rng, true);
    return h;
}

SegPrediction decode(const ClassQuerySet& queries, const AdaptedFeatures& pyramid,
                     const SegHead& head) {
    if (pyramid.pyramid_vfm.empty()) throw ConfigError("decode: empty feature pyramid");
    if (pyramid.pyramid_vfm.size() != head.level_proj.size())
        throw ConfigError("decode: pyramid depth " +
                          std::to_string(pyramid.pyramid_vfm.size()) +
                          " does not match head levels " +
                          std::to_string(head.level_proj.size()));
    const int64_t hp = pyramid.pyramid_vfm[0].hp, wp = pyramid.pyramid_vfm[0].wp;

    // average of per-level projections of the stream-concatenated tokens
    Tensor pix;
    for (size_t i = 0; i < head.level_proj.size(); ++i) {
        Tensor f = head.level_proj[i](concat_cols(
            {pyramid.pyramid_vfm[i].tokens, pyramid.pyramid_vlm[i].tokens}));
        pix = pix.defined() ? add(pix, f) : f;
    }
    pix = head.ln_pix(scale(pix, 1.0 / static_cast<double>(head.level_proj.size())));

    Tensor q = queries.queries;
    for (const auto& st : head.stages) {
        q = add(q, mha_forward(st.cross, st.ln_cross(q), pix));
        Tensor n = st.ln_self(q);
        q = add(q, mha_forward(st.self_attn, n, n));
        q = add(q, st.mlp(st.ln_mlp(q)));
    }

    Tensor pix2 = upsample2x_bilinear(head.pixel_head(pix), hp, wp);
    Tensor mask_q = head.mask_embed(q);

    SegPrediction out;
    out.mask_logits = matmul(pix2, transpose(mask_q));
    out.class_logits = head.cls_head(q);
    out.pixel_embed = l2_normalize_rows(pix2);
    out.hq = 2 * hp;
    out.wq = 2 * wp;
    return out;
}

std::vector<int> downsample_labels(const std::vector<int>& labels, int64_t H, int64_t W,
                                   int64_t h, int64_t w) {
    if (static_cast<int64_t>(labels.size()) != H * W)
        throw ShapeError("downsample_labels: label count mismatch");
    std::vector<int> out(h * w);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            int64_t sr = std::min(H - 1, r * H / h + H / (2 * h));
            int64_t sc = std::min(W - 1, c * W / w + W / (2 * w));
            out[r * w + c] = labels[sr * W + sc];
        }
    return out;
}

namespace {

// Bilinearly upsamples the [P x C] logits from the decoder grid to (H, W);
// requires H and W to be power-of-two multiples of the grid.
Tensor upsample_to(const Tensor& logits, int64_t hq, int64_t wq, int64_t H, int64_t W) {
    Tensor x = logits;
    int64_t h = hq, w = wq;
    while (h < H || w < W) {
        x = upsample2x_bilinear(x, h, w);
        h *= 2;
        w *= 2;
    }
    if (h != H || w != W)
        throw ShapeError("mask upsample: decoder grid " + std::to_string(hq) + "x" +
                         std::to_string(wq) + " does not reach " + std::to_string(H) +
                         "x" + std::to_string(W));
    return x;
}

}  // namespace

Tensor loss_seg(const SegPrediction& pred, const std::vector<int>& labels, int64_t H,
                int64_t W, const LossWeights& w) {
    return compute_losses(pred, ClassQuerySet{}, labels, H, W, w).seg;
}

Tensor loss_align(const Tensor& pixel_embed, const Tensor& queries,
                  const std::vector<int>& labels_lowres, AlignVariant variant,
                  double tau) {
    if (tau <= 0) throw ConfigError("loss_align: temperature must be positive");
    if (pixel_embed.cols() != queries.cols())
        throw ShapeError("loss_align: width mismatch, pixels " +
                         shape_str(pixel_embed.shape()) + " queries " +
                         shape_str(queries.shape()));
    const int64_t P = pixel_embed.rows(), C = queries.rows();
    if (static_cast<int64_t>(labels_lowres.size()) != P)
        throw ShapeError("loss_align: label count mismatch");
    Tensor s = scale(matmul(pixel_embed, transpose(queries)), 1.0 / tau);
    std::vector<double> valid(P, 0.0);
    bool any = false;
    for (int64_t p = 0; p < P; ++p)
        if (labels_lowres[p] != kIgnoreLabel) valid[p] = 1.0, any = true;
    if (!any) return Tensor::scalar(0.0);
    if (variant == AlignVariant::softmax) {
        std::vector<int> tgt(P, 0);
        for (int64_t p = 0; p < P; ++p)
            if (labels_lowres[p] != kIgnoreLabel) tgt[p] = labels_lowres[p];
        return nll_masked(log_softmax_lastdim(s), tgt, valid);
    }
    Tensor onehot = Tensor::zeros({P, C});
    Tensor mask = Tensor::zeros({P, C});
    for (int64_t p = 0; p < P; ++p) {
        if (labels_lowres[p] == kIgnoreLabel) continue;
        onehot.data()[p * C + labels_lowres[p]] = 1.0;
        for (int64_t c = 0; c < C; ++c) mask.data()[p * C + c] = 1.0;
    }
    return bce_with_logits_masked(s, onehot, mask);
}

LossTerms compute_losses(const SegPrediction& pred, const ClassQuerySet& queries,
                         const std::vector<int>& labels, int64_t H, int64_t W,
                         const LossWeights& w) {
    const int64_t C = pred.mask_logits.cols();
    if (static_cast<int64_t>(labels.size()) != H * W)
        throw ShapeError("compute_losses: label count mismatch");

    LossTerms t;
    std::vector<char> present(C, 0);
    int64_t n_valid = 0;
    for (int v : labels)
        if (v != kIgnoreLabel) {
            if (v < 0 || v >= C) throw ConfigError("label out of range");
            present[v] = 1;
            ++n_valid;
        }
    t.all_ignored = n_valid == 0;

    Tensor zero = Tensor::scalar(0.0);
    if (t.all_ignored) {
        t.bce = t.dice = t.cls = t.align = t.seg = t.total = zero;
        return t;
    }

    Tensor full = upsample_to(pred.mask_logits, pred.hq, pred.wq, H, W);  // [H*W x C]
    Tensor onehot = Tensor::zeros({H * W, C});
    Tensor vmask = Tensor::zeros({H * W, C});
    for (int64_t p = 0; p < H * W; ++p) {
        if (labels[p] == kIgnoreLabel) continue;
        onehot.data()[p * C + labels[p]] = 1.0;
        for (int64_t c = 0; c < C; ++c) vmask.data()[p * C + c] = 1.0;
    }
    t.bce = bce_with_logits_masked(full, onehot, vmask);

    // dice over classes present in the image; ignore pixels are gated out
    Tensor prob = mul(sigmoid(full), vmask);
    Tensor dice_sum = zero;
    int64_t n_present = 0;
    for (int64_t c = 0; c < C; ++c) {
        if (!present[c]) continue;
        Tensor pc = slice_cols(prob, c, c + 1);
        Tensor gc = slice_cols(onehot, c, c + 1);
        Tensor inter = sum(mul(pc, gc));
        Tensor denom = add(sum(pc), sum(gc));
        dice_sum = add(dice_sum, sub(Tensor::scalar(1.0), div(scale(inter, 2.0), denom)));
        ++n_present;
    }
    t.dice = scale(dice_sum, 1.0 / static_cast<double>(n_present));

    // per-query classification: query c targets class c when present,
    // the no-object column C otherwise
    std::vector<int> cls_tgt(C);
    std::vector<double> cls_mask(C, 1.0);
    for (int64_t c = 0; c < C; ++c) cls_tgt[c] = present[c] ? static_cast<int>(c) : C;
    t.cls = nll_masked(log_softmax_lastdim(pred.class_logits), cls_tgt, cls_mask);

    t.seg = add(add(scale(t.bce, w.bce), scale(t.dice, w.dice)), scale(t.cls, w.cls));

    if (queries.queries.defined()) {
        std::vector<int> low = downsample_labels(labels, H, W, pred.hq, pred.wq);
        t.align = loss_align(pred.pixel_embed, queries.queries, low, w.align_variant,
                             w.tau);
        t.total = add(t.seg, t.align);
    } else {
        t.align = zero;
        t.total = t.seg;
    }
    return t;
}

Tensor loss_total(const SegPrediction& pred, const ClassQuerySet& queries,
                  const std::vector<int>& labels, int64_t H, int64_t W,
                  const LossWeights& w) {
    return compute_losses(pred, queries, labels, H, W, w).total;
}

std::vector<int> predict_labels(const SegPrediction& pred, int64_t H, int64_t W) {
    Tape::Pause pause;
    const int64_t C = pred.mask_logits.cols();
    Tensor full = upsample_to(pred.mask_logits, pred.hq, pred.wq, H, W);
    Tensor cls = softmax_lastdim(pred.class_logits);  // [C x C+1]
    std::vector<int> out(H * W, 0);
    for (int64_t p = 0; p < H * W; ++p) {
        double best = -1.0;
        for (int64_t c = 0; c < C; ++c) {
            double m = 1.0 / (1.0 + std::exp(-full.data()[p * C + c]));
            double s = cls.data()[c * (C + 1) + c] * m;
            if (s > best) {
                best = s;
                out[p] = static_cast<int>(c);
            }
        }
    }
    return out;
}

IouReport miou(const std::vector<int>& pred, const std::vector<int>& gt, int64_t C,
               int ignore) {
    if (pred.size() != gt.size()) throw ShapeError("miou: size mismatch");
    std::vector<int64_t> tp(C, 0), fp(C, 0), fn(C, 0);
    for (size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] == ignore) continue;
        if (pred[i] == gt[i]) {
            ++tp[gt[i]];
        } else {
            ++fn[gt[i]];
            if (pred[i] >= 0 && pred[i] < C) ++fp[pred[i]];
        }
    }
    IouReport r;
    r.per_class.assign(C, 0.0);
    r.valid.assign(C, false);
    double acc = 0.0;
    int64_t n = 0;
    for (int64_t c = 0; c < C; ++c) {
        int64_t u = tp[c] + fp[c] + fn[c];
        if (u == 0) continue;
        r.per_class[c] = static_cast<double>(tp[c]) / static_cast<double>(u);
        r.valid[c] = true;
        acc += r.per_class[c];
        ++n;
    }
    r.mean = n > 0 ? acc / static_cast<double>(n) : 0.0;
    return r;
}

void write_label_grid(const std::string& path, const std::vector<int>& labels,
                      int64_t W, int64_t H) {
    if (static_cast<int64_t>(labels.size()) != W * H)
        throw ShapeError("write_label_grid: label count mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    auto u32 = [&](uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v),
                              static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
        f.write(reinterpret_cast<char*>(b), 4);
    };
    u32(static_cast<uint32_t>(W));
    u32(static_cast<uint32_t>(H));
    for (int v : labels) f.put(static_cast<char>(v == kIgnoreLabel ? 255 : v));
}

void write_label_ppm(const std::string& path, const std::vector<int>& labels,
                     int64_t W, int64_t H) {
    static const unsigned char palette[][3] = {
        {40, 40, 40},    // background
        {220, 60, 60},   // disk
        {60, 200, 80},   // square
        {70, 110, 230},  // stripe
        {200, 200, 60}, {200, 60, 200}, {60, 200, 200}, {230, 150, 60},
    };
    if (static_cast<int64_t>(labels.size()) != W * H)
        throw ShapeError("write_label_ppm: label count mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    f << "P6\n" << W << " " << H << "\n255\n";
    static const unsigned char black[3] = {0, 0, 0};
    for (int v : labels) {
        const unsigned char* rgb = (v >= 0 && v < 8) ? palette[v] : black;
        f.write(reinterpret_cast<const char*>(rgb), 3);
    }
}

}  // namespace mf
