#include "mfuser/pipeline.hpp"

#include <cmath>

#include "mfuser/dataset.hpp"

namespace mf {

namespace {

// Independent init stream per submodule: hash of the run seed and a label.
std::mt19937_64 module_rng(uint64_t seed, const std::string& label) {
    uint64_t h = seed ^ 0x9e3779b97f4a7c15ULL;
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return std::mt19937_64(h);
}

// Fixed seeds for the "pretrained" frozen parts — identical across runs.
constexpr uint64_t kVfmSeed = 1001, kVlmSeed = 2002, kHeadSeed = 3003,
                   kTextSeed = 4004;

void zero_stream(std::vector<TokenSequence>& pyr, TokenSequence& final_seq) {
    for (auto& s : pyr) s.tokens = Tensor::zeros(s.tokens.shape());
    final_seq.tokens = Tensor::zeros(final_seq.tokens.shape());
}

}  // namespace

std::vector<const Adapter*> MFuserModel::adapter_ptrs() const {
    std::vector<const Adapter*> out;
    out.reserve(adapters.size());
    for (const auto& a : adapters) out.push_back(a.get());
    return out;
}

MFuserModel build_model(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.d_vlm != cfg.d_t)
        throw ConfigError("d_vlm must equal d_t: the frozen alignment head is "
                          "shared between the VLM stream and the text encoder");
    MFuserModel m;
    m.cfg = cfg;
    m.adapter_mode = adapter_mode_from_string(cfg.adapter);
    m.fusion = fusion_mode_from_string(cfg.fusion);
    m.enhancer_mode = enhancer_mode_from_string(cfg.enhancer);
    m.weights = LossWeights{cfg.lambda_bce, cfg.lambda_dice, cfg.lambda_cls,
                            align_variant_from_string(cfg.align_variant), cfg.tau};

    EncoderConfig vc{cfg.patch_size, cfg.n_vfm, cfg.d_vfm, cfg.heads,
                     StreamTag::VFM, kVfmSeed};
    EncoderConfig lc{cfg.patch_size, cfg.n_vlm, cfg.d_vlm, cfg.heads,
                     StreamTag::VLM, kVlmSeed};
    m.vfm = make_frozen_encoder(m.ps, "vfm", vc);
    m.vlm = make_frozen_encoder(m.ps, "vlm", lc);

    std::mt19937_64 head_rng(kHeadSeed);
    m.align_head = m.ps.frozen("align_head",
                               Tensor::randn({cfg.d_t, cfg.d_t}, head_rng,
                                             1.0 / std::sqrt(double(cfg.d_t))));
    m.text = make_toy_text_encoder(m.ps, "text", cfg.d_t, 0, kTextSeed, m.align_head);
    if (cfg.n_prompts > 0) {
        std::mt19937_64 prng = module_rng(cfg.seed, "prompts");
        Tensor p = Tensor::randn({cfg.n_prompts, cfg.d_t}, prng, 0.02);
        m.text.prompts = m.ps.trainable("text.prompts", p.shape(), p.vec());
    }

    if (m.fusion == FusionMode::fused) {
        int64_t slots = adapter_slots(cfg.n_vfm, cfg.stride);
        AdapterDims dims{cfg.d_vfm, cfg.d_vlm, cfg.d_low, cfg.d_state, 16};
        for (int64_t i = 0; i < slots; ++i) {
            std::mt19937_64 rng = module_rng(cfg.seed, "adapter" + std::to_string(i));
            m.adapters.push_back(make_adapter(m.adapter_mode, m.ps,
                                              "adapter" + std::to_string(i), dims,
                                              rng));
        }
    }

    std::mt19937_64 erng = module_rng(cfg.seed, "enhancer");
    m.enhancer = make_mtenhancer(m.ps, "enhancer", cfg.d_t, cfg.heads, cfg.d_state,
                                 erng, cfg.enhancer_repeats);

    std::mt19937_64 xrng = module_rng(cfg.seed, "xv");
    m.xv_proj_vfm = make_linear(m.ps, "xv.vfm", cfg.d_vfm, cfg.d_t, xrng, true);
    m.xv_proj_vlm = make_linear(m.ps, "xv.vlm", cfg.d_t, cfg.d_t, xrng, true);

    std::mt19937_64 drng = module_rng(cfg.seed, "decoder");
    m.head = make_seg_head(m.ps, "decoder",
                           static_cast<int64_t>(class_names().size()), cfg.d_t,
                           cfg.d_vfm, cfg.d_vlm, 4, cfg.heads, drng,
                           cfg.decoder_stages);
    return m;
}

ModelOutput model_forward(const MFuserModel& m, const Tensor& image) {
    ModelOutput out;
    out.feats = forward_with_adapters(image, m.vfm, m.vlm, m.adapter_ptrs(),
                                      m.cfg.stride);
    if (m.fusion == FusionMode::vfm_only)
        zero_stream(out.feats.pyramid_vlm, out.feats.vlm_final);
    else if (m.fusion == FusionMode::vlm_only)
        zero_stream(out.feats.pyramid_vfm, out.feats.vfm_final);

    ClassQuerySet q0 = encode_classes(m.text, class_names());

    Tensor v_vfm = m.xv_proj_vfm(out.feats.vfm_final.tokens);
    Tensor v_vlm =
        m.xv_proj_vlm(matmul(out.feats.vlm_final.tokens, m.align_head));
    Tensor x_v = mean_pool_rows(concat_rows({v_vfm, v_vlm}),
                                m.cfg.visual_summary_tokens);

    out.queries.class_names = q0.class_names;
    out.queries.queries = enhance(q0.queries, x_v, m.enhancer_mode, m.enhancer);
    out.pred = decode(out.queries, out.feats, m.head);
    return out;
}

LossTerms model_loss(const MFuserModel& m, const SegSample& sample,
                     const ModelOutput& out) {
    ClassQuerySet aligned{l2_normalize_rows(out.queries.queries),
                          out.queries.class_names};
    return compute_losses(out.pred, aligned, sample.labels, sample.H, sample.W,
                          m.weights);
}

ParamCensus param_census(const MFuserModel& m) {
    ParamCensus c;
    for (const auto& e : m.ps.entries()) {
        if (!e.trainable) continue;
        int64_t n = e.tensor.numel();
        if (e.name.rfind("adapter", 0) == 0)
            c.adapters += n;
        else if (e.name.rfind("enhancer", 0) == 0)
            c.enhancer += n;
        else if (e.name.rfind("decoder", 0) == 0)
            c.decoder += n;
        else if (e.name.rfind("text.prompts", 0) == 0)
            c.prompts += n;
        else if (e.name.rfind("xv.", 0) == 0)
            c.summary += n;
        else
            throw ContractError("unclassified trainable parameter: " + e.name);
    }
    return c;
}

}  // namespace mf
