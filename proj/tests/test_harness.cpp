#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mfuser/bench.hpp"
#include "mfuser/checkpoint.hpp"
#include "mfuser/dataset.hpp"
#include "mfuser/pca.hpp"
#include "mfuser/train.hpp"
#include "oracles.hpp"

using namespace mf;

namespace {

ExperimentConfig tiny_cfg(uint64_t seed = 1) {
    ExperimentConfig c;
    c.seed = seed;
    c.image_size = 32;
    c.patch_size = 8;
    c.d_vfm = 16;
    c.n_vfm = 4;
    c.d_vlm = 12;
    c.n_vlm = 4;
    c.d_t = 12;
    c.d_low = 4;
    c.d_state = 4;
    c.heads = 2;
    c.n_prompts = 2;
    c.decoder_stages = 1;
    c.visual_summary_tokens = 8;
    c.batch_size = 1;
    c.iters = 3;
    c.warmup = 1;
    c.n_train = 4;
    c.n_eval = 2;
    c.log_every = 1;
    c.eval_every = 0;
    return c;
}

}  // namespace

TEST_CASE("config: set/serialize round-trip, file loading, overrides, hash") {
    ExperimentConfig c;
    c.set("lr", "0.5");
    c.set("adapter", "conv_adapter");
    c.set("augment", "false");
    CHECK(c.lr == 0.5);
    CHECK(c.adapter == "conv_adapter");
    CHECK_FALSE(c.augment);
    CHECK_THROWS_AS(c.set("learning_rate", "0.5"), ConfigError);
    CHECK_THROWS_AS(c.set("iters", "ten"), ConfigError);
    CHECK_THROWS_AS(c.set("augment", "maybe"), ConfigError);

    // serialize -> set round trip reproduces the hash
    ExperimentConfig d;
    std::istringstream lines(c.serialize());
    std::string line;
    while (std::getline(lines, line)) {
        size_t eq = line.find('=');
        d.set(line.substr(0, eq), line.substr(eq + 1));
    }
    CHECK(d.hash() == c.hash());
    ExperimentConfig base;
    CHECK(base.hash() != c.hash());

    const char* path = "harness_cfg.txt";
    {
        std::ofstream f(path);
        f << "# comment line\n";
        f << "lr = 0.25   # trailing comment\n";
        f << "\n";
        f << "stride=2\n";
    }
    ExperimentConfig loaded = load_config(path);
    CHECK(loaded.lr == 0.25);
    CHECK(loaded.stride == 2);
    std::remove(path);
    CHECK_THROWS_AS(load_config("no_such_file.cfg"), ConfigError);

    apply_overrides(loaded, {{"stride", "4"}, {"enhancer", "no_enhance"}});
    CHECK(loaded.stride == 4);
    CHECK(loaded.enhancer == "no_enhance");

    CHECK(split_csv("a,b,,c") == std::vector<std::string>{"a", "b", "c"});
}

TEST_CASE("config validation rejects inconsistent mode combinations") {
    ExperimentConfig c;
    c.validate();  // defaults are fine
    ExperimentConfig bad = c;
    bad.adapter = "none";  // fused without adapter
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.fusion = "vfm_only";  // baseline with adapter attached
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.stride = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.tau = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.image_size = 60;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.adapter = "magic";
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("dataset: geometry/style split, determinism, error paths") {
    auto src = generate_dataset(domain_spec("source"), 6, 9, 32);
    auto sha = generate_dataset(domain_spec("shift_a"), 6, 9, 32);
    REQUIRE(src.size() == 6);
    for (size_t i = 0; i < 6; ++i) {
        // same seed: identical label maps across domains...
        CHECK(src[i].labels == sha[i].labels);
        // ...but visibly different images
        CHECK(oracle::max_abs_diff(src[i].image.vec(), sha[i].image.vec()) > 0.01);
    }
    auto again = generate_dataset(domain_spec("source"), 6, 9, 32);
    for (size_t i = 0; i < 6; ++i)
        CHECK(oracle::max_abs_diff(src[i].image.vec(), again[i].image.vec()) == 0.0);

    // every class shows up somewhere in a small batch
    std::vector<int64_t> hist(4, 0);
    for (const auto& s : src)
        for (int v : s.labels) ++hist[v];
    for (int c = 0; c < 4; ++c) CHECK(hist[c] > 0);
    // background dominates
    CHECK(hist[0] > hist[1]);

    CHECK_THROWS_AS(generate_dataset(domain_spec("source"), 0, 1, 32), ConfigError);
    CHECK_THROWS_AS(domain_spec("shift_z"), ConfigError);

    // augmentation keeps the label histogram (flip + color jitter only)
    std::mt19937_64 rng(4);
    for (int i = 0; i < 4; ++i) {
        SegSample a = augment_sample(src[0], rng);
        std::vector<int64_t> h2(4, 0);
        for (int v : a.labels) ++h2[v];
        std::vector<int64_t> h1(4, 0);
        for (int v : src[0].labels) ++h1[v];
        CHECK(h1 == h2);
        for (int64_t k = 0; k < a.image.numel(); ++k) {
            CHECK(a.image.data()[k] >= 0.0);
            CHECK(a.image.data()[k] <= 1.5);
        }
    }
}

TEST_CASE("checkpoint: bit-exact round trip, hashes, corrupt files") {
    MFuserModel m = build_model(tiny_cfg());
    std::string before = trainable_hash(m.ps);
    const char* path = "harness_ckpt.bin";
    save_checkpoint(path, m.ps);

    // scribble over the trainable parameters, then restore
    for (Tensor t : m.ps.trainable_tensors())
        for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] += 1.0;
    CHECK(trainable_hash(m.ps) != before);
    load_checkpoint(path, m.ps);
    CHECK(trainable_hash(m.ps) == before);

    // loading into a structurally different model fails loudly
    ExperimentConfig other = tiny_cfg();
    other.d_low = 8;
    MFuserModel m2 = build_model(other);
    CHECK_THROWS_AS(load_checkpoint(path, m2.ps), ConfigError);

    {
        std::ofstream f("harness_bad.bin", std::ios::binary);
        f << "NOTACKPT and some garbage";
    }
    CHECK_THROWS_AS(load_checkpoint("harness_bad.bin", m.ps), ConfigError);
    CHECK_THROWS_AS(load_checkpoint("harness_missing.bin", m.ps), ConfigError);
    std::remove(path);
    std::remove("harness_bad.bin");
}

TEST_CASE("learning-rate schedule: ramp, peak, linear decay, clamped warm-up") {
    ExperimentConfig c;
    c.lr = 1.0;
    c.iters = 100;
    c.warmup = 10;
    CHECK(lr_at(c, 0) == doctest::Approx(0.1));
    CHECK(lr_at(c, 9) == doctest::Approx(1.0));
    CHECK(lr_at(c, 10) == doctest::Approx(1.0));
    CHECK(lr_at(c, 55) == doctest::Approx(0.5));
    CHECK(lr_at(c, 99) == doctest::Approx(1.0 / 90.0));
    for (int64_t i = 1; i < 100; ++i) {
        if (i < 10) CHECK(lr_at(c, i) >= lr_at(c, i - 1));
        if (i > 10) CHECK(lr_at(c, i) < lr_at(c, i - 1));
    }
    // warm-up longer than the run: clamped to half the budget
    c.iters = 6;
    c.warmup = 100;
    CHECK(lr_at(c, 0) == doctest::Approx(1.0 / 3.0));
    CHECK(lr_at(c, 2) == doctest::Approx(1.0));
    CHECK(lr_at(c, 5) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("AdamW: normalized first step plus decoupled decay") {
    Tensor p = Tensor::param({2}, {1.0, -2.0});
    p.grad()[0] = 0.5;
    p.grad()[1] = -3.0;
    AdamW opt({p}, 0.9, 0.999, 0.1);
    opt.step(0.01);
    // bias-corrected first step: mhat/g = 1, sqrt(vhat) = |g|, so the
    // gradient term is sign(g); decay subtracts lr*wd*w
    CHECK(p.data()[0] ==
          doctest::Approx(1.0 - 0.01 * (0.5 / (0.5 + 1e-8) + 0.1 * 1.0))
              .epsilon(1e-10));
    CHECK(p.data()[1] ==
          doctest::Approx(-2.0 - 0.01 * (-3.0 / (3.0 + 1e-8) + 0.1 * -2.0))
              .epsilon(1e-10));
}

TEST_CASE("pca: planted subspace recovery, ordering, padding, rgb range") {
    std::mt19937_64 rng(21);
    const int64_t T = 300, D = 8;
    // three orthogonal directions with well-separated scales
    std::vector<double> dirs = {1, 0, 0, 0, 0, 0, 0, 0,
                                0, 1, 0, 0, 0, 0, 0, 0,
                                0, 0, 1, 0, 0, 0, 0, 0};
    std::vector<double> scales = {5.0, 2.0, 0.7};
    Tensor x = Tensor::zeros({T, D});
    std::normal_distribution<double> g(0.0, 1.0);
    for (int64_t t = 0; t < T; ++t)
        for (int c = 0; c < 3; ++c) {
            double a = scales[c] * g(rng);
            for (int64_t d = 0; d < D; ++d) x.data()[t * D + d] += a * dirs[c * D + d];
        }
    PcaResult r = pca_components(x, 3);
    CHECK(r.rank == 3);
    CHECK(r.eigenvalues[0] >= r.eigenvalues[1]);
    CHECK(r.eigenvalues[1] >= r.eigenvalues[2]);
    for (int c = 0; c < 3; ++c) {
        double norm = 0.0, dot = 0.0;
        for (int64_t d = 0; d < D; ++d) {
            norm += r.components.data()[c * D + d] * r.components.data()[c * D + d];
            dot += r.components.data()[c * D + d] * dirs[c * D + d];
        }
        CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-8));
        CHECK(std::abs(dot) > 0.99);  // recovered up to sign
        // projections are mean-centered
        double mu = 0.0;
        for (int64_t t = 0; t < T; ++t) mu += r.projected.data()[t * 3 + c];
        CHECK(std::abs(mu / T) < 1e-9);
    }

    // rank-2 data: the third component is zero-padded
    Tensor x2 = Tensor::zeros({50, D});
    for (int64_t t = 0; t < 50; ++t) {
        x2.data()[t * D + 0] = g(rng);
        x2.data()[t * D + 1] = g(rng);
    }
    PcaResult r2 = pca_components(x2, 3);
    CHECK(r2.rank == 2);
    CHECK(r2.eigenvalues[2] == 0.0);
    for (int64_t d = 0; d < D; ++d) CHECK(r2.components.data()[2 * D + d] == 0.0);

    std::vector<unsigned char> rgb = pca_rgb(x2);
    CHECK(rgb.size() == 50 * 3);
    for (int64_t t = 0; t < 50; ++t) CHECK(rgb[t * 3 + 2] == 0);  // padded channel

    CHECK_THROWS_AS(pca_components(Tensor::zeros({2, 4}), 3), ShapeError);
}

TEST_CASE("fit_line: exact fits and model discrimination") {
    std::vector<double> x = {1, 2, 3, 4};
    std::vector<double> y = {3, 5, 7, 9};  // y = 2x + 1
    FitResult f = fit_line(x, y);
    CHECK(f.a == doctest::Approx(2.0));
    CHECK(f.b == doctest::Approx(1.0));
    CHECK(f.r2 == doctest::Approx(1.0));

    // quadratic data: the fit against x^2 explains it, the linear fit cannot
    std::vector<double> yq, xq;
    for (double v : x) {
        yq.push_back(v * v);
        xq.push_back(v * v);
    }
    CHECK(fit_line(xq, yq).r2 == doctest::Approx(1.0));
    CHECK(fit_line(x, yq).r2 < 1.0);
    CHECK_THROWS_AS(fit_line({1.0}, {2.0}), ConfigError);
}

TEST_CASE("model assembly: census, frozen/trainable separation, init contract") {
    MFuserModel a = build_model(tiny_cfg(1));
    ParamCensus c = param_census(a);
    CHECK(c.total() == a.ps.trainable_count());
    CHECK(c.adapters > 0);
    CHECK(c.decoder > 0);
    CHECK(c.prompts == 2 * 12);

    // frozen parts never depend on the run seed; trainable parts do
    MFuserModel b = build_model(tiny_cfg(2));
    CHECK(frozen_hash(a.ps) == frozen_hash(b.ps));
    CHECK(trainable_hash(a.ps) != trainable_hash(b.ps));
    MFuserModel a2 = build_model(tiny_cfg(1));
    CHECK(trainable_hash(a2.ps) == trainable_hash(a.ps));

    // the shared-head width constraint is enforced at assembly time
    ExperimentConfig bad = tiny_cfg();
    bad.d_t = 16;
    CHECK_THROWS_AS(build_model(bad), ConfigError);
}

TEST_CASE("short training runs are reproducible and leave the encoders alone") {
    namespace fs = std::filesystem;
    std::ostringstream log1, log2;
    MFuserModel m1 = build_model(tiny_cfg(5));
    MFuserModel m2 = build_model(tiny_cfg(5));
    TrainResult r1 = train(m1, "harness_run1", log1);
    TrainResult r2 = train(m2, "harness_run2", log2);
    CHECK_FALSE(r1.aborted);
    CHECK(r1.frozen_before == r1.frozen_after);
    CHECK(trainable_hash(m1.ps) == trainable_hash(m2.ps));
    CHECK(r1.loss0 == r2.loss0);
    CHECK(r1.final_loss == r2.final_loss);
    CHECK(r1.final_loss < r1.loss0 * 2.0);  // sanity: no blow-up in 3 steps
    CHECK(fs::exists(r1.metrics_path));
    CHECK(fs::exists(r1.checkpoint_path));
    std::ifstream csv(r1.metrics_path);
    std::string header;
    std::getline(csv, header);
    CHECK(header.rfind("iter,lr,loss_total", 0) == 0);

    // the saved checkpoint reproduces the evaluation exactly
    MFuserModel m3 = build_model(tiny_cfg(5));
    load_checkpoint(r1.checkpoint_path, m3.ps);
    double e1 = evaluate_domain(m1, "shift_a", 2, 123);
    double e3 = evaluate_domain(m3, "shift_a", 2, 123);
    CHECK(e1 == e3);
    fs::remove_all("harness_run1");
    fs::remove_all("harness_run2");
}

TEST_CASE("an untrained model scores poorly on the task") {
    MFuserModel m = build_model(tiny_cfg(3));
    double miou = evaluate_domain(m, "source", 4, 99);
    CHECK(miou >= 0.0);
    CHECK(miou < 0.4);
}
