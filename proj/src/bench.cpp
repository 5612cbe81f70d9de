#include "mfuser/bench.hpp"

#include <chrono>
#include <cmath>

namespace mf {

FitResult fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw ConfigError("fit_line: need at least 2 matching points");
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    FitResult f;
    double denom = n * sxx - sx * sx;
    f.a = denom != 0 ? (n * sxy - sx * sy) / denom : 0.0;
    f.b = (sy - f.a * sx) / n;
    double ss_res = 0, ss_tot = 0, mean = sy / n;
    for (size_t i = 0; i < x.size(); ++i) {
        double e = y[i] - (f.a * x[i] + f.b);
        ss_res += e * e;
        ss_tot += (y[i] - mean) * (y[i] - mean);
    }
    f.r2 = ss_tot > 0 ? 1.0 - ss_res / ss_tot : 1.0;
    return f;
}

namespace {

// Factor T into the most square (hp, wp) grid with hp*wp == T.
std::pair<int64_t, int64_t> square_grid(int64_t T) {
    int64_t h = static_cast<int64_t>(std::sqrt(static_cast<double>(T)));
    while (h > 1 && T % h != 0) --h;
    return {h, T / h};
}

}  // namespace

std::vector<BenchRow> bench_adapters(const AdapterDims& dims,
                                     const std::vector<AdapterMode>& modes,
                                     const std::vector<int64_t>& Ts,
                                     int64_t flops_ref_T, int reps) {
    std::vector<BenchRow> rows;
    std::mt19937_64 rng(99);
    for (AdapterMode mode : modes) {
        ParamStore ps;
        std::mt19937_64 init_rng(7);
        auto adapter = make_adapter(mode, ps, "bench_" + adapter_mode_name(mode),
                                    dims, init_rng);
        BenchRow row;
        row.name = adapter->name();
        row.params = adapter->param_count();
        row.flops_ref = adapter->flop_count(flops_ref_T);
        row.Ts = Ts;
        std::vector<double> lin_x, quad_x;
        for (int64_t T : Ts) {
            auto [hp, wp] = square_grid(T);
            TokenSequence xv{Tensor::randn({T, dims.d_vfm}, rng, 1.0), hp, wp,
                             StreamTag::VFM};
            TokenSequence xl{Tensor::randn({T, dims.d_vlm}, rng, 1.0), hp, wp,
                             StreamTag::VLM};
            adapter->offsets(xv, xl);  // warm-up
            double best = 1e300;
            for (int r = 0; r < reps; ++r) {
                auto t0 = std::chrono::steady_clock::now();
                adapter->offsets(xv, xl);
                auto t1 = std::chrono::steady_clock::now();
                best = std::min(best,
                                std::chrono::duration<double>(t1 - t0).count());
            }
            row.seconds.push_back(best);
            lin_x.push_back(static_cast<double>(T));
            quad_x.push_back(static_cast<double>(T) * static_cast<double>(T));
        }
        if (Ts.size() >= 2) {
            row.r2_linear = fit_line(lin_x, row.seconds).r2;
            row.r2_quadratic = fit_line(quad_x, row.seconds).r2;
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace mf
