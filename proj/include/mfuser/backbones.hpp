#pragma once

// Frozen toy stand-ins for the two foundation-model encoders: a patch
// tokenizer plus pre-norm transformer blocks with seeded Gaussian weights
// that are never updated, and a toy text encoder with prompt tuning as its
// only trainable part.

#include <string>
#include <vector>

#include "mfuser/adapters.hpp"
#include "mfuser/blocks.hpp"
#include "mfuser/mtenhancer.hpp"
#include "mfuser/mvfuser.hpp"

namespace mf {

struct EncoderConfig {
    int64_t patch_size = 8;
    int64_t depth = 8;
    int64_t width = 64;
    int64_t heads = 4;
    StreamTag tag = StreamTag::VFM;
    uint64_t seed = 0;
};

struct EncoderBlockParams {
    LayerNormParams ln1, ln2;
    Mha attn;
    Mlp mlp;
};

struct FrozenEncoder {
    EncoderConfig cfg;
    Linear patch_embed;  // [patch^2*3 x width]
    std::vector<EncoderBlockParams> blocks;
};

// Fixed sinusoidal position table for a T-token sequence of the given width.
Tensor sinusoidal_positions(int64_t T, int64_t width);

FrozenEncoder make_frozen_encoder(ParamStore& ps, const std::string& prefix,
                                  const EncoderConfig& cfg);

// image: [H x W x 3], H and W divisible by the patch size. Tokens are the
// linearly embedded non-overlapping patches plus sinusoidal positions.
TokenSequence tokenize(const Tensor& image, const FrozenEncoder& enc);

Tensor encoder_block_forward(const Tensor& x, const EncoderBlockParams& blk);

// Plain frozen forward of all blocks (no adapters).
TokenSequence encoder_forward(const Tensor& image, const FrozenEncoder& enc);

struct AdaptedFeatures {
    TokenSequence vfm_final, vlm_final;
    // refined features at depths {N/4, N/2, 3N/4, N} of each stream
    std::vector<TokenSequence> pyramid_vfm, pyramid_vlm;
};

// Runs both encoders layer by layer in lockstep, applying one adapter after
// every `stride`-th layer pair (proportional depth matching when depths
// differ). adapters may be empty (frozen passthrough); its size must equal
// the number of attach points.
AdaptedFeatures forward_with_adapters(const Tensor& image, const FrozenEncoder& vfm,
                                      const FrozenEncoder& vlm,
                                      const std::vector<const Adapter*>& adapters,
                                      int64_t stride);

int64_t adapter_slots(int64_t depth, int64_t stride);

// ---- toy text encoder --------------------------------------------------

struct ToyTextEncoder {
    std::vector<std::string> vocabulary;
    Tensor embed;    // frozen [V x D_t]
    Tensor prompts;  // trainable [P x D_t]; undefined when P = 0 (fully frozen)
    Tensor head;     // frozen [D_t x D_t], shared with the VLM alignment head
};

ToyTextEncoder make_toy_text_encoder(ParamStore& ps, const std::string& prefix,
                                     int64_t d_t, int64_t n_prompts, uint64_t seed,
                                     Tensor shared_head);

// One L2-normalized embedding per class name; unknown names are an error.
ClassQuerySet encode_classes(const ToyTextEncoder& enc,
                             const std::vector<std::string>& class_names);

}  // namespace mf
