#pragma once

// Full model assembly: the two frozen encoders with their adapter chain,
// the toy text encoder, the query enhancer and the segmentation head, all
// registered in one parameter store. Each submodule draws its init from an
// independently seeded RNG stream, so adding or removing one module never
// shifts another's initialization.

#include <memory>
#include <string>
#include <vector>

#include "mfuser/adapters.hpp"
#include "mfuser/backbones.hpp"
#include "mfuser/config.hpp"
#include "mfuser/mtenhancer.hpp"
#include "mfuser/seghead.hpp"

namespace mf {

struct MFuserModel {
    ExperimentConfig cfg;
    AdapterMode adapter_mode = AdapterMode::none;
    FusionMode fusion = FusionMode::fused;
    EnhancerMode enhancer_mode = EnhancerMode::full;
    LossWeights weights;

    ParamStore ps;
    FrozenEncoder vfm, vlm;
    Tensor align_head;  // frozen [D_t x D_t], shared VLM / text projection
    ToyTextEncoder text;
    std::vector<std::unique_ptr<Adapter>> adapters;
    MtEnhancer enhancer;
    // visual summary: per-stream projections to D_t, then mean pooling
    Linear xv_proj_vfm, xv_proj_vlm;
    SegHead head;

    std::vector<const Adapter*> adapter_ptrs() const;
};

MFuserModel build_model(const ExperimentConfig& cfg);

struct ModelOutput {
    AdaptedFeatures feats;
    ClassQuerySet queries;  // enhanced
    SegPrediction pred;
};

ModelOutput model_forward(const MFuserModel& m, const Tensor& image);

LossTerms model_loss(const MFuserModel& m, const SegSample& sample,
                     const ModelOutput& out);

// Analytic trainable-parameter census per module group, summing to the
// store's trainable count.
struct ParamCensus {
    int64_t adapters = 0, enhancer = 0, decoder = 0, prompts = 0, summary = 0;
    int64_t total() const { return adapters + enhancer + decoder + prompts + summary; }
};
ParamCensus param_census(const MFuserModel& m);

}  // namespace mf
