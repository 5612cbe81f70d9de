// Command-line harness: train / eval / bench / ablate / viz-pca / gen-data
// over the synthetic domain-shift task. Every flag mirrors a config key and
// wins over the config file.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mfuser/bench.hpp"
#include "mfuser/checkpoint.hpp"
#include "mfuser/config.hpp"
#include "mfuser/dataset.hpp"
#include "mfuser/pca.hpp"
#include "mfuser/pipeline.hpp"
#include "mfuser/train.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "out";
    std::map<std::string, std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
    cmd->add_option("--config", a.config_path, "config file (key=value lines)");
    cmd->add_option("--out", a.out_dir, "output directory");
    for (const char* key : {"seed", "adapter", "fusion", "enhancer", "stride",
                            "iters"}) {
        std::string k = key;
        cmd->add_option_function<std::string>(
            "--" + k, [&a, k](const std::string& v) { a.overrides[k] = v; },
            "override config key '" + k + "'");
    }
}

mf::ExperimentConfig resolve(const CommonArgs& a) {
    mf::ExperimentConfig cfg = a.config_path.empty()
                                   ? mf::ExperimentConfig{}
                                   : mf::load_config(a.config_path);
    mf::apply_overrides(cfg, a.overrides);
    cfg.validate();
    return cfg;
}

void write_image_ppm(const std::string& path, const mf::Tensor& image) {
    const int64_t H = image.dim(0), W = image.dim(1);
    std::ofstream f(path, std::ios::binary);
    f << "P6\n" << W << " " << H << "\n255\n";
    for (int64_t i = 0; i < H * W * 3; ++i) {
        double v = std::clamp(image.data()[i], 0.0, 1.0);
        f.put(static_cast<char>(std::lround(255.0 * v)));
    }
}

int run_train(const CommonArgs& a) {
    mf::ExperimentConfig cfg = resolve(a);
    mf::MFuserModel model = mf::build_model(cfg);
    mf::TrainResult r = mf::train(model, a.out_dir, std::cout);
    if (r.aborted) {
        std::cerr << "training aborted at iteration " << r.abort_iter << "\n";
        return 1;
    }
    auto table = mf::evaluate(model, mf::split_csv(cfg.eval_domains), cfg.n_eval,
                              cfg.seed + 7777);
    std::cout << "domain,miou\n";
    for (const auto& [d, v] : table) std::cout << d << "," << v << "\n";
    std::cout << "checkpoint " << r.checkpoint_path << "\n";
    return 0;
}

int run_eval(const CommonArgs& a, const std::string& ckpt) {
    mf::ExperimentConfig cfg = resolve(a);
    mf::MFuserModel model = mf::build_model(cfg);
    if (!ckpt.empty()) mf::load_checkpoint(ckpt, model.ps);
    auto table = mf::evaluate(model, mf::split_csv(cfg.eval_domains), cfg.n_eval,
                              cfg.seed + 7777);
    std::cout << "domain,miou\n";
    double acc = 0;
    for (const auto& [d, v] : table) {
        std::cout << d << "," << v << "\n";
        acc += v;
    }
    std::cout << "average," << acc / static_cast<double>(table.size()) << "\n";
    return 0;
}

int run_bench(const CommonArgs& a) {
    mf::ExperimentConfig cfg = resolve(a);
    mf::AdapterDims dims{cfg.d_vfm, cfg.d_vlm, cfg.d_low, cfg.d_state, 16};
    std::vector<mf::AdapterMode> modes = {
        mf::AdapterMode::mvfuser, mf::AdapterMode::mvfuser_separate,
        mf::AdapterMode::self_attn_concat, mf::AdapterMode::self_attn_separate,
        mf::AdapterMode::conv_adapter, mf::AdapterMode::cross_attn_adapter};
    std::vector<int64_t> Ts = {1024, 2048, 4096, 8192};
    auto rows = mf::bench_adapters(dims, modes, Ts);
    std::cout << "adapter,params,flops_T1024,r2_linear,r2_quadratic";
    for (int64_t T : Ts) std::cout << ",seconds_T" << T;
    std::cout << "\n";
    for (const auto& r : rows) {
        std::cout << r.name << "," << r.params << "," << r.flops_ref << ","
                  << r.r2_linear << "," << r.r2_quadratic;
        for (double s : r.seconds) std::cout << "," << s;
        std::cout << "\n";
    }
    return 0;
}

int run_ablate(const CommonArgs& a, const std::string& axes_csv) {
    mf::ExperimentConfig base = resolve(a);
    std::filesystem::create_directories(a.out_dir);
    std::ofstream log(a.out_dir + "/ablate.log");
    auto cells = mf::ablation_grid(base, mf::split_csv(axes_csv), a.out_dir, log);
    std::ofstream csv(a.out_dir + "/ablation.csv");
    std::ostringstream head;
    head << "axis,value,params,config_hash,avg_shifted_miou";
    for (const auto& d : mf::split_csv(base.eval_domains)) head << ",miou_" << d;
    head << ",skipped\n";
    csv << head.str();
    std::cout << head.str();
    for (const auto& c : cells) {
        std::ostringstream row;
        row << c.axis << "," << c.value << "," << c.trainable_params << ","
            << c.config_hash << "," << c.avg_shifted;
        for (const auto& d : mf::split_csv(base.eval_domains)) {
            auto it = c.per_domain.find(d);
            row << "," << (it == c.per_domain.end() ? 0.0 : it->second);
        }
        row << "," << (c.skipped ? c.skip_reason : "") << "\n";
        csv << row.str();
        std::cout << row.str();
    }
    return 0;
}

int run_viz(const CommonArgs& a, const std::string& ckpt,
            const std::string& domain) {
    mf::ExperimentConfig cfg = resolve(a);
    mf::MFuserModel model = mf::build_model(cfg);
    if (!ckpt.empty()) mf::load_checkpoint(ckpt, model.ps);
    std::filesystem::create_directories(a.out_dir);
    auto data = mf::generate_dataset(mf::domain_spec(domain), 1, cfg.seed,
                                     cfg.image_size);
    mf::ModelOutput out = mf::model_forward(model, data[0].image);
    write_image_ppm(a.out_dir + "/input.ppm", data[0].image);
    mf::write_pca_ppm(a.out_dir + "/pca_vfm.ppm", out.feats.vfm_final);
    mf::write_pca_ppm(a.out_dir + "/pca_vlm.ppm", out.feats.vlm_final);
    mf::write_label_ppm(a.out_dir + "/labels.ppm", data[0].labels, data[0].W,
                        data[0].H);
    std::cout << "wrote input.ppm, pca_vfm.ppm, pca_vlm.ppm, labels.ppm to "
              << a.out_dir << "\n";
    return 0;
}

int run_gendata(const CommonArgs& a, const std::string& domain, int64_t n) {
    mf::ExperimentConfig cfg = resolve(a);
    std::filesystem::create_directories(a.out_dir);
    auto data = mf::generate_dataset(mf::domain_spec(domain), n, cfg.seed,
                                     cfg.image_size);
    for (size_t i = 0; i < data.size(); ++i) {
        std::string stem = a.out_dir + "/" + domain + "_" + std::to_string(i);
        write_image_ppm(stem + ".ppm", data[i].image);
        mf::write_label_grid(stem + ".labels", data[i].labels, data[i].W,
                             data[i].H);
        mf::write_label_ppm(stem + "_labels.ppm", data[i].labels, data[i].W,
                            data[i].H);
    }
    std::cout << "wrote " << data.size() << " samples to " << a.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MFuser-style fusion harness on a synthetic domain-shift task"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string ckpt, axes = "fusion,enhancer,stride", domain = "source";
    int64_t n_samples = 8;

    auto* train_cmd = app.add_subcommand("train", "train a model");
    add_common(train_cmd, args);
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    add_common(eval_cmd, args);
    eval_cmd->add_option("--checkpoint", ckpt, "checkpoint to load");
    auto* bench_cmd = app.add_subcommand("bench", "adapter efficiency benchmark");
    add_common(bench_cmd, args);
    auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation grid");
    add_common(ablate_cmd, args);
    ablate_cmd->add_option("--axes", axes, "comma-separated axes");
    auto* viz_cmd = app.add_subcommand("viz-pca", "PCA feature visualization");
    add_common(viz_cmd, args);
    viz_cmd->add_option("--checkpoint", ckpt, "checkpoint to load");
    viz_cmd->add_option("--domain", domain, "domain preset");
    auto* gen_cmd = app.add_subcommand("gen-data", "dump synthetic samples");
    add_common(gen_cmd, args);
    gen_cmd->add_option("--domain", domain, "domain preset");
    gen_cmd->add_option("--n", n_samples, "sample count");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train_cmd->parsed()) return run_train(args);
        if (eval_cmd->parsed()) return run_eval(args, ckpt);
        if (bench_cmd->parsed()) return run_bench(args);
        if (ablate_cmd->parsed()) return run_ablate(args, axes);
        if (viz_cmd->parsed()) return run_viz(args, ckpt, domain);
        if (gen_cmd->parsed()) return run_gendata(args, domain, n_samples);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
