#pragma once

// Mamba-based co-adapter: consumes per-layer token features from the two
// frozen encoders, concatenated along the token axis (VFM tokens first),
// and produces additive offsets for both streams through parallel
// sequential (conv + selective scan) and spatial (depthwise 2-D conv)
// branches joined by a SiLU gate. Output projections are zero-initialized
// so a fresh block is an exact identity.

#include <cstdint>
#include <utility>

#include "mfuser/blocks.hpp"
#include "mfuser/ssm.hpp"
#include "mfuser/tensor.hpp"

namespace mf {

enum class StreamTag { VFM, VLM };

struct TokenSequence {
    Tensor tokens;  // [T x D]
    int64_t hp = 0, wp = 0;  // patch grid, hp * wp == T
    StreamTag source = StreamTag::VFM;
};

struct MvFuserConfig {
    int64_t d_vfm = 0;
    int64_t d_vlm = 0;
    int64_t d_low = 0;    // bottleneck width (default D/4 chosen by caller)
    int64_t d_state = 16;
    int64_t conv_k = 4;   // causal kernel of the sequential branch
    int64_t spa_k = 3;    // depthwise spatial kernel
};

struct MvFuserBlock {
    MvFuserConfig cfg;
    LayerNormParams ln_vfm, ln_vlm;
    Linear down_vfm, down_vlm;  // per-stream bottleneck projections
    Tensor conv_seq_k;          // [conv_k x d_low], causal
    SsmParams ssm;
    Tensor conv_spa_k;          // [spa_k^2 x d_low], per-stream 2-D depthwise
    Linear up_vfm, up_vlm;      // zero-initialized
};

MvFuserBlock make_mvfuser(ParamStore& ps, const std::string& prefix,
                          const MvFuserConfig& cfg, std::mt19937_64& rng);

// SSM(SiLU(conv_causal(x_cat))) over the concatenated 2T-token sequence.
Tensor seq_branch(const Tensor& x_cat, const MvFuserBlock& blk);

// Each T-token half reshaped to its (hp, wp) grid, depthwise conv applied,
// halves re-concatenated. Operates per stream: concatenated streams are not
// spatially adjacent.
Tensor spa_branch(const Tensor& x_cat, const MvFuserBlock& blk, int64_t hp, int64_t wp);

// Full block: bottleneck, both branches, gate, zero-init up-projections.
// Returns (delta_vfm, delta_vlm) with the input shapes.
std::pair<Tensor, Tensor> fuse(const TokenSequence& x_vfm, const TokenSequence& x_vlm,
                               const MvFuserBlock& blk);

int64_t mvfuser_param_count(const MvFuserConfig& cfg);
uint64_t mvfuser_flop_count(const MvFuserConfig& cfg, int64_t T);

// Single-stream variant used by the "separate MVFuser" ablation: the same
// branch structure applied to one encoder's tokens only.
struct SingleMvFuser {
    int64_t d_model = 0, d_low = 0, d_state = 16, conv_k = 4, spa_k = 3;
    LayerNormParams ln;
    Linear down;
    Tensor conv_seq_k;
    SsmParams ssm;
    Tensor conv_spa_k;
    Linear up;  // zero-initialized
};

SingleMvFuser make_single_mvfuser(ParamStore& ps, const std::string& prefix,
                                  int64_t d_model, int64_t d_low, int64_t d_state,
                                  std::mt19937_64& rng);
Tensor single_mvfuser_offsets(const TokenSequence& x, const SingleMvFuser& blk);
int64_t single_mvfuser_param_count(const SingleMvFuser& blk);
uint64_t single_mvfuser_flop_count(const SingleMvFuser& blk, int64_t T);

}  // namespace mf
