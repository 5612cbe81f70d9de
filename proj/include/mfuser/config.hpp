#pragma once

// Flat key=value experiment configuration. Every CLI flag mirrors a config
// key and wins on conflict; the fully resolved config (and its hash) is
// embedded in every run log for reproducibility.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mf {

enum class FusionMode { vfm_only, vlm_only, concat_frozen, fused };
FusionMode fusion_mode_from_string(const std::string& s);
std::string fusion_mode_name(FusionMode m);

struct ExperimentConfig {
    uint64_t seed = 1;

    // model dims (toy scale)
    int64_t image_size = 64;
    int64_t patch_size = 8;
    int64_t d_vfm = 64;
    int64_t n_vfm = 8;
    int64_t d_vlm = 48;
    int64_t n_vlm = 8;
    int64_t d_t = 48;
    int64_t d_low = 16;
    int64_t d_state = 16;
    int64_t heads = 4;
    int64_t n_prompts = 4;
    int64_t enhancer_repeats = 1;
    int64_t decoder_stages = 3;
    int64_t visual_summary_tokens = 64;

    // experiment axes
    std::string adapter = "mvfuser";
    std::string fusion = "fused";
    std::string enhancer = "full";
    int64_t stride = 1;

    // optimizer / schedule
    double lr = 1e-3;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int64_t batch_size = 2;
    int64_t iters = 2000;
    int64_t warmup = 100;

    // losses
    double lambda_bce = 5.0;
    double lambda_dice = 5.0;
    double lambda_cls = 2.0;
    std::string align_variant = "softmax";
    double tau = 0.07;

    // data
    std::string train_domain = "source";
    std::string eval_domains = "source,shift_a,shift_b";
    int64_t n_train = 128;
    int64_t n_eval = 24;
    bool augment = true;

    // logging
    int64_t log_every = 100;
    int64_t eval_every = 500;

    void set(const std::string& key, const std::string& value);
    std::string serialize() const;  // sorted key=value lines
    std::string hash() const;       // sha256 of serialize()
    void validate() const;          // mode combinations checked up front
};

ExperimentConfig load_config(const std::string& path);
void apply_overrides(ExperimentConfig& cfg,
                     const std::map<std::string, std::string>& kv);
std::vector<std::string> split_csv(const std::string& s);

}  // namespace mf
