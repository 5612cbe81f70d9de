#pragma once

// Hybrid attention-Mamba refiner for class text embeddings: self-attention
// over classes, a conditional Mamba block scanning [q; x_v; q_copy], and an
// MLP, all residual with zero-initialized output projections.

#include <string>
#include <vector>

#include "mfuser/blocks.hpp"
#include "mfuser/ssm.hpp"
#include "mfuser/tensor.hpp"

namespace mf {

struct ClassQuerySet {
    Tensor queries;  // [C x D_t], row order fixed for all downstream use
    std::vector<std::string> class_names;
};

struct VisualSummary {
    Tensor x_v;  // [T_v x D_t]
};

enum class EnhancerMode { full, no_enhance, no_hybrid, cross_attention };

EnhancerMode enhancer_mode_from_string(const std::string& s);
std::string enhancer_mode_name(EnhancerMode m);

struct MtEnhancer {
    int64_t d_t = 0;
    int64_t d_inner = 0;   // Mamba expansion width
    int64_t repeats = 1;
    // attention block (pre-norm)
    LayerNormParams ln_attn;
    Mha attn;
    // conditional Mamba block
    LayerNormParams ln_mamba;
    Linear in_proj;        // d_t -> 2*d_inner (value path and gate)
    Tensor conv_k;         // [4 x d_inner], causal
    SsmParams ssm;
    Linear out_proj;       // zero-initialized
    // cross-attention alternative used by the enhancer ablation
    LayerNormParams ln_cross;
    Mha cross;
    // MLP block
    LayerNormParams ln_mlp;
    Mlp mlp;               // fc2 zero-initialized
};

MtEnhancer make_mtenhancer(ParamStore& ps, const std::string& prefix, int64_t d_t,
                           int64_t heads, int64_t d_state, std::mt19937_64& rng,
                           int64_t repeats = 1);

// q <- q + MHSA(q): encodes inter-class relationships.
Tensor class_self_attention(const Tensor& q, const MtEnhancer& e);

// Scans [q; x_v; q_copy]; the first C rows of the delta are causally
// independent of x_v, the last C rows are conditioned on it. Returns
// q + delta_q + delta_q_copy.
Tensor conditional_mamba(const Tensor& q, const Tensor& x_v, const MtEnhancer& e);

// Internal Mamba output over the concatenated sequence, exposed for the
// causality checks: [2C+T_v x d_t].
Tensor conditional_mamba_raw(const Tensor& q, const Tensor& x_v, const MtEnhancer& e);

Tensor enhancer_mlp(const Tensor& q, const MtEnhancer& e);

Tensor enhance(const Tensor& q, const Tensor& x_v, EnhancerMode mode, const MtEnhancer& e);

int64_t mtenhancer_param_count(const MtEnhancer& e);

}  // namespace mf
