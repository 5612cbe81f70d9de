#pragma once

// Adapter efficiency benchmark: analytic parameter/FLOP counters plus
// measured wall times over a sequence-length grid, with linear and
// quadratic least-squares fits.

#include <string>
#include <vector>

#include "mfuser/adapters.hpp"

namespace mf {

struct FitResult {
    double a = 0.0, b = 0.0;  // y = a*x + b
    double r2 = 0.0;
};

// Least-squares fit of y against x (pass T for a linear model, T^2 for a
// quadratic-in-T model).
FitResult fit_line(const std::vector<double>& x, const std::vector<double>& y);

struct BenchRow {
    std::string name;
    int64_t params = 0;
    uint64_t flops_ref = 0;            // analytic count at the reference T
    std::vector<int64_t> Ts;
    std::vector<double> seconds;       // measured forward wall time per T
    double r2_linear = 0.0, r2_quadratic = 0.0;
};

// Builds each requested adapter at the given dims and times offsets() on
// random token grids of length T per stream.
std::vector<BenchRow> bench_adapters(const AdapterDims& dims,
                                     const std::vector<AdapterMode>& modes,
                                     const std::vector<int64_t>& Ts,
                                     int64_t flops_ref_T = 1024, int reps = 3);

}  // namespace mf
