#pragma once

// Training loop (AdamW with linear warm-up and decay over the trainable
// parameters only), evaluation over domain presets, and the ablation grid
// runner.

#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mfuser/pipeline.hpp"

namespace mf {

// Decoupled weight decay; moments allocated per parameter.
class AdamW {
public:
    AdamW(std::vector<Tensor> params, double beta1, double beta2,
          double weight_decay, double eps = 1e-8);
    void step(double lr);

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double beta1_, beta2_, wd_, eps_;
    int64_t t_ = 0;
};

// Piecewise-linear schedule: ramps from lr/warmup at iteration 0 to the peak
// at `warmup`, then decays linearly to 0 at `iters`.
double lr_at(const ExperimentConfig& cfg, int64_t iter);

struct TrainResult {
    std::string checkpoint_path;
    std::string metrics_path;
    std::string frozen_before, frozen_after;
    double loss0 = 0.0;             // before the first update
    double final_loss = 0.0;
    double source_miou = 0.0;       // training-domain mIoU at the end
    bool aborted = false;
    int64_t abort_iter = -1;
};

TrainResult train(MFuserModel& model, const std::string& out_dir,
                  std::ostream& log);

// Per-domain mIoU; deterministic given the model parameters and eval_seed.
std::map<std::string, double> evaluate(const MFuserModel& model,
                                       const std::vector<std::string>& domains,
                                       int64_t n_eval, uint64_t eval_seed);
double evaluate_domain(const MFuserModel& model, const std::string& domain,
                       int64_t n_eval, uint64_t eval_seed);

struct AblationCell {
    std::string axis, value;
    ExperimentConfig cfg;
    std::map<std::string, double> per_domain;
    double avg_shifted = 0.0;
    int64_t trainable_params = 0;
    std::string config_hash;
    bool skipped = false;
    std::string skip_reason;
};

// Axes: "fusion" (the seven adapter/fusion rows), "enhancer" (four modes),
// "stride" (1, 2, 4, 8). Each cell trains with the base config's seed and
// iteration budget.
std::vector<AblationCell> ablation_grid(const ExperimentConfig& base,
                                        const std::vector<std::string>& axes,
                                        const std::string& out_dir,
                                        std::ostream& log);

}  // namespace mf
