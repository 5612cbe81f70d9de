#include "mfuser/train.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "mfuser/checkpoint.hpp"
#include "mfuser/dataset.hpp"

namespace mf {

AdamW::AdamW(std::vector<Tensor> params, double beta1, double beta2,
             double weight_decay, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), wd_(weight_decay),
      eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void AdamW::step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        const std::vector<double>& g = p.grad();
        double* w = p.data();
        for (int64_t k = 0; k < p.numel(); ++k) {
            m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
            v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
            double mhat = m_[i][k] / bc1;
            double vhat = v_[i][k] / bc2;
            w[k] -= lr * (mhat / (std::sqrt(vhat) + eps_) + wd_ * w[k]);
        }
    }
}

double lr_at(const ExperimentConfig& cfg, int64_t iter) {
    // warm-up never exceeds half the budget, so short smoke runs still decay
    int64_t warmup = std::min(cfg.warmup, cfg.iters / 2);
    if (warmup > 0 && iter < warmup)
        return cfg.lr * static_cast<double>(iter + 1) / static_cast<double>(warmup);
    int64_t tail = cfg.iters - warmup;
    if (tail <= 0) return cfg.lr;
    return cfg.lr * static_cast<double>(cfg.iters - iter) / static_cast<double>(tail);
}

namespace {

double batch_miou(const MFuserModel& model, const std::vector<SegSample>& samples) {
    std::vector<int> all_pred, all_gt;
    for (const auto& s : samples) {
        ModelOutput out = model_forward(model, s.image);
        std::vector<int> pred = predict_labels(out.pred, s.H, s.W);
        all_pred.insert(all_pred.end(), pred.begin(), pred.end());
        all_gt.insert(all_gt.end(), s.labels.begin(), s.labels.end());
    }
    return miou(all_pred, all_gt, static_cast<int64_t>(class_names().size())).mean;
}

}  // namespace

TrainResult train(MFuserModel& model, const std::string& out_dir, std::ostream& log) {
    const ExperimentConfig& cfg = model.cfg;
    std::filesystem::create_directories(out_dir);
    TrainResult res;
    res.checkpoint_path = out_dir + "/checkpoint.bin";
    res.metrics_path = out_dir + "/metrics.csv";

    log << "config_hash " << cfg.hash() << "\n";
    log << "config begin\n" << cfg.serialize() << "config end\n";
    ParamCensus census = param_census(model);
    log << "trainable_params total=" << census.total()
        << " adapters=" << census.adapters << " enhancer=" << census.enhancer
        << " decoder=" << census.decoder << " prompts=" << census.prompts
        << " summary=" << census.summary << "\n";
    res.frozen_before = frozen_hash(model.ps);
    log << "frozen_hash_before " << res.frozen_before << "\n";

    std::vector<SegSample> data = generate_dataset(domain_spec(cfg.train_domain),
                                                   cfg.n_train, cfg.seed,
                                                   cfg.image_size);
    std::mt19937_64 loop_rng(cfg.seed ^ 0xda7a5e1ec7edULL);
    std::uniform_int_distribution<size_t> pick(0, data.size() - 1);

    std::vector<Tensor> params = model.ps.trainable_tensors();
    AdamW opt(params, cfg.beta1, cfg.beta2, cfg.weight_decay);

    std::ofstream csv(res.metrics_path);
    csv << "iter,lr,loss_total,loss_bce,loss_dice,loss_cls,loss_align,source_miou\n";
    csv.precision(10);

    std::string last_good = out_dir + "/checkpoint_last_good.bin";
    bool have_last_good = false;

    for (int64_t it = 0; it < cfg.iters; ++it) {
        Tape tape;
        double loss_val, bce_v, dice_v, cls_v, align_v;
        {
            Tape::Scope scope(tape);
            Tensor loss;
            Tensor bce, dice, cls, align;
            for (int64_t b = 0; b < cfg.batch_size; ++b) {
                SegSample s = data[pick(loop_rng)];
                if (cfg.augment) s = augment_sample(s, loop_rng);
                ModelOutput out = model_forward(model, s.image);
                LossTerms t = model_loss(model, s, out);
                loss = loss.defined() ? add(loss, t.total) : t.total;
                bce = bce.defined() ? add(bce, t.bce) : t.bce;
                dice = dice.defined() ? add(dice, t.dice) : t.dice;
                cls = cls.defined() ? add(cls, t.cls) : t.cls;
                align = align.defined() ? add(align, t.align) : t.align;
            }
            double inv = 1.0 / static_cast<double>(cfg.batch_size);
            loss = scale(loss, inv);
            loss_val = loss.value();
            bce_v = bce.value() * inv;
            dice_v = dice.value() * inv;
            cls_v = cls.value() * inv;
            align_v = align.value() * inv;
            if (it == 0) res.loss0 = loss_val;
            if (!std::isfinite(loss_val)) {
                res.aborted = true;
                res.abort_iter = it;
                log << "abort: non-finite loss at iteration " << it
                    << (have_last_good ? ", last-good checkpoint: " + last_good
                                       : ", no checkpoint written yet")
                    << "\n";
                return res;
            }
            for (auto& p : params) p.zero_grad();
            backward(loss);
        }
        opt.step(lr_at(cfg, it));

        if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iters - 1)) {
            csv << it << "," << lr_at(cfg, it) << "," << loss_val << "," << bce_v
                << "," << dice_v << "," << cls_v << "," << align_v << ",";
            if (cfg.eval_every > 0 && (it % cfg.eval_every == 0 || it == cfg.iters - 1)) {
                std::vector<SegSample> probe(data.begin(),
                                             data.begin() + std::min<size_t>(
                                                                8, data.size()));
                csv << batch_miou(model, probe);
            }
            csv << "\n";
            csv.flush();
            log << "iter " << it << " lr " << lr_at(cfg, it) << " loss " << loss_val
                << "\n";
        }
        if (cfg.eval_every > 0 && it > 0 && it % cfg.eval_every == 0) {
            save_checkpoint(last_good, model.ps);
            have_last_good = true;
        }
        res.final_loss = loss_val;
    }

    res.frozen_after = frozen_hash(model.ps);
    log << "frozen_hash_after " << res.frozen_after << "\n";
    save_checkpoint(res.checkpoint_path, model.ps);
    res.source_miou = evaluate_domain(model, cfg.train_domain, cfg.n_eval,
                                      cfg.seed + 7777);
    log << "source_miou " << res.source_miou << "\n";
    return res;
}

double evaluate_domain(const MFuserModel& model, const std::string& domain,
                       int64_t n_eval, uint64_t eval_seed) {
    std::vector<SegSample> data = generate_dataset(domain_spec(domain), n_eval,
                                                   eval_seed, model.cfg.image_size);
    return batch_miou(model, data);
}

std::map<std::string, double> evaluate(const MFuserModel& model,
                                       const std::vector<std::string>& domains,
                                       int64_t n_eval, uint64_t eval_seed) {
    std::map<std::string, double> out;
    for (const auto& d : domains) out[d] = evaluate_domain(model, d, n_eval, eval_seed);
    return out;
}

std::vector<AblationCell> ablation_grid(const ExperimentConfig& base,
                                        const std::vector<std::string>& axes,
                                        const std::string& out_dir,
                                        std::ostream& log) {
    struct Row {
        std::string axis, value;
    };
    std::vector<Row> rows;
    for (const auto& axis : axes) {
        if (axis == "fusion") {
            for (const char* v : {"vfm_only", "vlm_only", "concat_frozen",
                                  "conv_adapter", "cross_attn_adapter",
                                  "mvfuser_separate", "mvfuser"})
                rows.push_back({axis, v});
        } else if (axis == "enhancer") {
            for (const char* v : {"full", "no_enhance", "no_hybrid",
                                  "cross_attention"})
                rows.push_back({axis, v});
        } else if (axis == "stride") {
            for (const char* v : {"1", "2", "4", "8"}) rows.push_back({axis, v});
        } else {
            throw ConfigError("unknown ablation axis: " + axis);
        }
    }

    std::vector<AblationCell> cells;
    for (const auto& row : rows) {
        AblationCell cell;
        cell.axis = row.axis;
        cell.value = row.value;
        cell.cfg = base;
        if (row.axis == "fusion") {
            if (row.value == "vfm_only" || row.value == "vlm_only" ||
                row.value == "concat_frozen") {
                cell.cfg.fusion = row.value;
                cell.cfg.adapter = "none";
            } else {
                cell.cfg.fusion = "fused";
                cell.cfg.adapter = row.value;
            }
        } else if (row.axis == "enhancer") {
            cell.cfg.enhancer = row.value;
        } else {
            cell.cfg.stride = std::stoll(row.value);
        }
        try {
            cell.cfg.validate();
        } catch (const ConfigError& e) {
            cell.skipped = true;
            cell.skip_reason = e.what();
            log << "skip " << row.axis << "=" << row.value << ": " << e.what()
                << "\n";
            cells.push_back(cell);
            continue;
        }
        cell.config_hash = cell.cfg.hash();
        log << "cell " << row.axis << "=" << row.value << " config_hash "
            << cell.config_hash << "\n";
        MFuserModel model = build_model(cell.cfg);
        cell.trainable_params = model.ps.trainable_count();
        std::string cell_dir = out_dir + "/" + row.axis + "_" + row.value;
        train(model, cell_dir, log);
        cell.per_domain = evaluate(model, split_csv(cell.cfg.eval_domains),
                                   cell.cfg.n_eval, cell.cfg.seed + 7777);
        double acc = 0.0;
        int n = 0;
        for (const auto& [d, v] : cell.per_domain)
            if (d != cell.cfg.train_domain) {
                acc += v;
                ++n;
            }
        cell.avg_shifted = n > 0 ? acc / n : 0.0;
        log << "result " << row.axis << "=" << row.value << " params "
            << cell.trainable_params << " avg_shifted_miou " << cell.avg_shifted
            << "\n";
        cells.push_back(cell);
    }
    return cells;
}

}  // namespace mf
