#pragma once

// Text-queried mask decoder and the loss stack: enhanced class queries
// cross-attend to the multi-scale pyramid, every query is permanently
// anchored to its class (no bipartite matching), and the total loss is
// mask BCE + dice + per-query classification + a pixel-text alignment
// term in softmax or sigmoid form.

#include <string>
#include <vector>

#include "mfuser/backbones.hpp"
#include "mfuser/blocks.hpp"
#include "mfuser/mtenhancer.hpp"
#include "mfuser/tensor.hpp"

namespace mf {

constexpr int kIgnoreLabel = -1;

struct SegSample {
    Tensor image;             // [H x W x 3]
    std::vector<int> labels;  // H*W entries in {0..C-1} or kIgnoreLabel
    int64_t H = 0, W = 0;
};

enum class AlignVariant { softmax, sigmoid };
AlignVariant align_variant_from_string(const std::string& s);
std::string align_variant_name(AlignVariant v);

struct LossWeights {
    double bce = 5.0;
    double dice = 5.0;
    double cls = 2.0;
    AlignVariant align_variant = AlignVariant::softmax;
    double tau = 0.07;
};

struct SegPrediction {
    Tensor mask_logits;   // [P x C] at decoder resolution, pixels row-major
    Tensor class_logits;  // [C x (C+1)], last column = no-object
    Tensor pixel_embed;   // [P x D_t], L2-normalized rows
    int64_t hq = 0, wq = 0;  // decoder grid (double the patch grid)
};

struct DecoderStage {
    LayerNormParams ln_cross, ln_self, ln_mlp;
    Mha cross, self_attn;
    Mlp mlp;
};

struct SegHead {
    int64_t n_classes = 0;
    int64_t d_t = 0;
    std::vector<Linear> level_proj;  // one per pyramid level, (D_vfm+D_vlm) -> D_t
    LayerNormParams ln_pix;
    Linear pixel_head;  // D_t -> D_t, applied before the 2x upsample
    std::vector<DecoderStage> stages;
    Mlp mask_embed;     // query -> mask-embedding space
    Linear cls_head;    // D_t -> C+1
};

SegHead make_seg_head(ParamStore& ps, const std::string& prefix, int64_t n_classes,
                      int64_t d_t, int64_t d_vfm, int64_t d_vlm, int64_t levels,
                      int64_t heads, std::mt19937_64& rng, int64_t n_stages = 3);

// queries: [C x D_t]; pyramid levels pair VFM and VLM token sequences on the
// same grid. mask_logits[p, c] = <mask_embed(q_c), pixel_p>.
SegPrediction decode(const ClassQuerySet& queries, const AdaptedFeatures& pyramid,
                     const SegHead& head);

struct LossTerms {
    Tensor bce, dice, cls, align, seg, total;
    bool all_ignored = false;
};

// Mask losses are evaluated at full resolution (H, W) = 4x the decoder grid
// via bilinear upsampling of the mask logits; the alignment term uses
// nearest-downsampled labels at the decoder grid.
Tensor loss_seg(const SegPrediction& pred, const std::vector<int>& labels, int64_t H,
                int64_t W, const LossWeights& w);
Tensor loss_align(const Tensor& pixel_embed, const Tensor& queries,
                  const std::vector<int>& labels_lowres, AlignVariant variant, double tau);
Tensor loss_total(const SegPrediction& pred, const ClassQuerySet& queries,
                  const std::vector<int>& labels, int64_t H, int64_t W,
                  const LossWeights& w);
LossTerms compute_losses(const SegPrediction& pred, const ClassQuerySet& queries,
                         const std::vector<int>& labels, int64_t H, int64_t W,
                         const LossWeights& w);

// Nearest-neighbour label downsample from (H, W) to (h, w).
std::vector<int> downsample_labels(const std::vector<int>& labels, int64_t H, int64_t W,
                                   int64_t h, int64_t w);

// Per-pixel argmax of softmax(class_logits)[c, c] * sigmoid(mask_logit[p, c])
// after bilinear upsampling to (H, W).
std::vector<int> predict_labels(const SegPrediction& pred, int64_t H, int64_t W);

struct IouReport {
    std::vector<double> per_class;  // IoU, only meaningful where valid
    std::vector<bool> valid;        // union > 0
    double mean = 0.0;              // over valid classes
};

IouReport miou(const std::vector<int>& pred, const std::vector<int>& gt, int64_t C,
               int ignore = kIgnoreLabel);

// Raw label dump: u32 LE width, u32 LE height, then row-major class bytes.
void write_label_grid(const std::string& path, const std::vector<int>& labels,
                      int64_t W, int64_t H);
// Color-mapped P6 PPM using the fixed class palette.
void write_label_ppm(const std::string& path, const std::vector<int>& labels,
                     int64_t W, int64_t H);

}  // namespace mf
