#pragma once

// Selective state-space scan (S6 style): diagonal negative state matrix,
// input-dependent B/C/step produced by one linear projection, softplus step
// with a learned bias, and a skip connection. Provides the differentiable
// sequential recurrence, a blocked forward with identical semantics, and an
// analytic multiply-add cost model backed by an instrumented counter.

#include <cstdint>
#include <utility>

#include "mfuser/blocks.hpp"
#include "mfuser/tensor.hpp"

namespace mf {

struct SsmParams {
    int64_t d_inner = 0;
    int64_t d_state = 0;
    Tensor A_log;      // [d_inner x d_state], A = -exp(A_log)
    Tensor D_skip;     // [d_inner]
    Linear proj_bcd;   // d_inner -> 2*d_state + d_inner (B, C, delta_raw)
    Tensor delta_bias; // [d_inner]
};

// Initialization: state s of every channel decays at rate s+1 (A = -(s+1));
// softplus(delta_bias) uniform in [dt_min, dt_max].
SsmParams make_ssm(ParamStore& ps, const std::string& prefix, int64_t d_inner,
                   int64_t d_state, std::mt19937_64& rng, bool trainable = true,
                   double dt_min = 0.001, double dt_max = 0.1);

// Zero-order-hold state map with Euler input map for one timestep:
// Abar = exp(delta (x) A), Bbar = delta (x) B. A: [d_inner x d_state],
// B_t: [d_state], delta_t: [d_inner]; both results [d_inner x d_state].
std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& B_t,
                                     const Tensor& delta_t);

// h_t = Abar_t (.) h_{t-1} + Bbar_t * x_t; y_t = <C_t, h_t> + D (.) x_t,
// h_0 = 0. x: [T x d_inner]; fully differentiable.
Tensor scan_sequential(const Tensor& x, const SsmParams& p);

// Same recurrence evaluated block by block through composed affine state
// maps h -> a (.) h + b. Forward only; agrees with scan_sequential to
// within accumulation roundoff.
Tensor scan_blocked(const Tensor& x, const SsmParams& p, int64_t block);

// Exact multiply-add count of the scan recurrence (projection excluded).
uint64_t scan_cost(int64_t T, int64_t d_inner, int64_t d_state);

// Instrumented counter incremented by every executed recurrence multiply-add.
uint64_t scan_flop_counter();
void scan_flop_counter_reset();

}  // namespace mf
