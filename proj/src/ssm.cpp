#include "mfuser/ssm.hpp"

#include <cmath>

namespace mf {

namespace {

thread_local uint64_t g_scan_macs = 0;

// Core recurrence with hand-written adjoint. Inputs:
//   x [T x d], A [d x n] (negative), B [T x n], C [T x n],
//   delta [T x d] (positive), D [d].
Tensor ssm_scan_op(const Tensor& x, const Tensor& A, const Tensor& B, const Tensor& C,
                   const Tensor& delta, const Tensor& D) {
    const int64_t T = x.dim(0), d = x.dim(1), n = A.dim(1);
    if (A.dim(0) != d || B.dim(0) != T || B.dim(1) != n || C.dim(0) != T ||
        C.dim(1) != n || delta.dim(0) != T || delta.dim(1) != d || D.numel() != d)
        throw ShapeError("ssm_scan: inconsistent parameter shapes");
    for (double v : delta.vec())
        if (v <= 0.0) throw ContractError("ssm_scan: nonpositive step");

    Tape* tape = Tape::current();
    bool tr = tape && (x.tracked() || A.tracked() || B.tracked() || C.tracked() ||
                       delta.tracked() || D.tracked());

    auto oimpl = std::make_shared<TensorImpl>();
    oimpl->shape = {T, d};
    oimpl->data.assign(T * d, 0.0);
    if (tr) {
        oimpl->tracked = true;
        oimpl->grad.assign(T * d, 0.0);
    }
    Tensor out(oimpl);

    // state history kept only when the adjoint pass will need it
    auto hist = std::make_shared<std::vector<double>>();
    if (tr) hist->assign(static_cast<size_t>(T) * d * n, 0.0);

    std::vector<double> h(static_cast<size_t>(d) * n, 0.0);
    for (int64_t t = 0; t < T; ++t) {
        const double* xt = x.data() + t * d;
        const double* Bt = B.data() + t * n;
        const double* Ct = C.data() + t * n;
        const double* dt = delta.data() + t * d;
        double* yt = oimpl->data.data() + t * d;
        for (int64_t i = 0; i < d; ++i) {
            const double* Ai = A.data() + i * n;
            double* hi = h.data() + i * n;
            double acc = 0.0;
            double dti = dt[i], xti = xt[i];
            for (int64_t s = 0; s < n; ++s) {
                double ab = std::exp(dti * Ai[s]);
                double bb = dti * Bt[s];
                hi[s] = ab * hi[s] + bb * xti;
                acc += Ct[s] * hi[s];
            }
            g_scan_macs += 5 * static_cast<uint64_t>(n);
            yt[i] = acc + D.data()[i] * xti;
            g_scan_macs += 1;
            if (!std::isfinite(yt[i]))
                throw NumericError("ssm_scan: non-finite output at t=" + std::to_string(t));
        }
        if (tr)
            std::copy(h.begin(), h.end(), hist->begin() + static_cast<size_t>(t) * d * n);
    }

    if (tr) {
        auto ix = x.impl();
        auto iA = A.impl();
        auto iB = B.impl();
        auto iC = C.impl();
        auto idt = delta.impl();
        auto iD = D.impl();
        tape->record([ix, iA, iB, iC, idt, iD, oimpl, hist, T, d, n] {
            const double* g = oimpl->grad.data();
            std::vector<double> gh(static_cast<size_t>(d) * n, 0.0);
            for (int64_t t = T - 1; t >= 0; --t) {
                const double* xt = ix->data.data() + t * d;
                const double* Bt = iB->data.data() + t * n;
                const double* Ct = iC->data.data() + t * n;
                const double* dt = idt->data.data() + t * d;
                const double* ht = hist->data() + static_cast<size_t>(t) * d * n;
                const double* hprev =
                    (t > 0) ? hist->data() + static_cast<size_t>(t - 1) * d * n : nullptr;
                for (int64_t i = 0; i < d; ++i) {
                    const double* Ai = iA->data.data() + i * n;
                    double* ghi = gh.data() + i * n;
                    double gy = g[t * d + i];
                    double dti = dt[i], xti = xt[i];
                    double gx_acc = iD->data[i] * gy;
                    double gdt_acc = 0.0;
                    if (!iD->grad.empty()) iD->grad[i] += gy * xti;
                    for (int64_t s = 0; s < n; ++s) {
                        double hts = ht[i * n + s];
                        if (!iC->grad.empty()) iC->grad[t * n + s] += gy * hts;
                        double ghv = ghi[s] + gy * Ct[s];
                        double ab = std::exp(dti * Ai[s]);
                        double bb = dti * Bt[s];
                        double hp = hprev ? hprev[i * n + s] : 0.0;
                        double gab = ghv * hp;
                        double gbb = ghv * xti;
                        gx_acc += ghv * bb;
                        if (!iA->grad.empty()) iA->grad[i * n + s] += gab * dti * ab;
                        gdt_acc += gab * Ai[s] * ab + gbb * Bt[s];
                        if (!iB->grad.empty()) iB->grad[t * n + s] += gbb * dti;
                        ghi[s] = ghv * ab;
                    }
                    if (!ix->grad.empty()) ix->grad[t * d + i] += gx_acc;
                    if (!idt->grad.empty()) idt->grad[t * d + i] += gdt_acc;
                }
            }
        });
    }
    return out;
}

double inv_softplus(double y) { return std::log(std::expm1(y)); }

// B, C, delta from the shared projection. Shapes: [T x n], [T x n], [T x d].
struct ScanInputs {
    Tensor B, C, delta;
};

ScanInputs project_inputs(const Tensor& x, const SsmParams& p) {
    Tensor bcd = p.proj_bcd(x);
    Tensor B = slice_cols(bcd, 0, p.d_state);
    Tensor C = slice_cols(bcd, p.d_state, 2 * p.d_state);
    Tensor delta = softplus(add(slice_cols(bcd, 2 * p.d_state, 2 * p.d_state + p.d_inner),
                                p.delta_bias));
    return {B, C, delta};
}

}  // namespace

SsmParams make_ssm(ParamStore& ps, const std::string& prefix, int64_t d_inner,
                   int64_t d_state, std::mt19937_64& rng, bool trainable, double dt_min,
                   double dt_max) {
    if (d_inner < 1 || d_state < 1) throw ConfigError("make_ssm: positive dims required");
    SsmParams p;
    p.d_inner = d_inner;
    p.d_state = d_state;
    std::vector<double> alog(d_inner * d_state);
    for (int64_t i = 0; i < d_inner; ++i)
        for (int64_t s = 0; s < d_state; ++s)
            alog[i * d_state + s] = std::log(static_cast<double>(s + 1));
    std::vector<double> db(d_inner);
    std::uniform_real_distribution<double> dt_dist(dt_min, dt_max);
    for (auto& v : db) v = inv_softplus(dt_dist(rng));
    std::vector<double> dskip(d_inner, 1.0);
    if (trainable) {
        p.A_log = ps.trainable(prefix + ".A_log", {d_inner, d_state}, std::move(alog));
        p.delta_bias = ps.trainable(prefix + ".dt_bias", {d_inner}, std::move(db));
        p.D_skip = ps.trainable(prefix + ".D", {d_inner}, std::move(dskip));
    } else {
        p.A_log = ps.frozen(prefix + ".A_log", Tensor::from({d_inner, d_state}, std::move(alog)));
        p.delta_bias = ps.frozen(prefix + ".dt_bias", Tensor::from({d_inner}, std::move(db)));
        p.D_skip = ps.frozen(prefix + ".D", Tensor::from({d_inner}, std::move(dskip)));
    }
    p.proj_bcd = make_linear(ps, prefix + ".proj_bcd", d_inner, 2 * d_state + d_inner, rng,
                             trainable);
    return p;
}

std::pair<Tensor, Tensor> discretize(const Tensor& A, const Tensor& B_t,
                                     const Tensor& delta_t) {
    const int64_t d = A.dim(0), n = A.dim(1);
    if (B_t.numel() != n || delta_t.numel() != d)
        throw ShapeError("discretize: shape mismatch");
    for (double v : delta_t.vec())
        if (v <= 0.0) throw ContractError("discretize: nonpositive step");
    Tensor Abar = Tensor::zeros({d, n});
    Tensor Bbar = Tensor::zeros({d, n});
    for (int64_t i = 0; i < d; ++i)
        for (int64_t s = 0; s < n; ++s) {
            Abar.data()[i * n + s] = std::exp(delta_t.data()[i] * A.data()[i * n + s]);
            Bbar.data()[i * n + s] = delta_t.data()[i] * B_t.data()[s];
        }
    return {Abar, Bbar};
}

Tensor scan_sequential(const Tensor& x, const SsmParams& p) {
    if (x.shape().size() != 2 || x.dim(0) < 1)
        throw ShapeError("scan_sequential: nonempty [T x d_inner] input required");
    if (x.dim(1) != p.d_inner)
        throw ShapeError("scan_sequential: channel mismatch, input " + shape_str(x.shape()) +
                         " vs d_inner " + std::to_string(p.d_inner));
    ScanInputs in = project_inputs(x, p);
    Tensor A = scale(exp(p.A_log), -1.0);
    return ssm_scan_op(x, A, in.B, in.C, in.delta, p.D_skip);
}

Tensor scan_blocked(const Tensor& x, const SsmParams& p, int64_t block) {
    if (block < 1) throw ConfigError("scan_blocked: block size must be >= 1");
    if (x.shape().size() != 2 || x.dim(0) < 1)
        throw ShapeError("scan_blocked: nonempty [T x d_inner] input required");
    if (x.dim(1) != p.d_inner) throw ShapeError("scan_blocked: channel mismatch");
    Tape::Pause pause;
    ScanInputs in = project_inputs(x, p);
    const int64_t T = x.dim(0), d = p.d_inner, n = p.d_state;
    Tensor out = Tensor::zeros({T, d});
    std::vector<double> h0(static_cast<size_t>(d) * n, 0.0);
    std::vector<double> prod(h0.size()), part(h0.size());
    const double* A = nullptr;
    Tensor Aneg = scale(exp(p.A_log), -1.0);
    A = Aneg.data();
    for (int64_t t0 = 0; t0 < T; t0 += block) {
        int64_t t1 = std::min(t0 + block, T);
        std::fill(prod.begin(), prod.end(), 1.0);
        std::fill(part.begin(), part.end(), 0.0);
        for (int64_t t = t0; t < t1; ++t) {
            const double* xt = x.data() + t * d;
            const double* Bt = in.B.data() + t * n;
            const double* Ct = in.C.data() + t * n;
            const double* dt = in.delta.data() + t * d;
            double* yt = out.data() + t * d;
            for (int64_t i = 0; i < d; ++i) {
                double acc = 0.0;
                for (int64_t s = 0; s < n; ++s) {
                    size_t k = static_cast<size_t>(i) * n + s;
                    double ab = std::exp(dt[i] * A[i * n + s]);
                    double bb = dt[i] * Bt[s];
                    prod[k] *= ab;
                    part[k] = ab * part[k] + bb * xt[i];
                    double ht = prod[k] * h0[k] + part[k];
                    acc += Ct[s] * ht;
                    g_scan_macs += 5;
                }
                yt[i] = acc + p.D_skip.data()[i] * xt[i];
                g_scan_macs += 1;
            }
        }
        for (size_t k = 0; k < h0.size(); ++k) h0[k] = prod[k] * h0[k] + part[k];
    }
    return out;
}

uint64_t scan_cost(int64_t T, int64_t d_inner, int64_t d_state) {
    if (T < 1 || d_inner < 1 || d_state < 1)
        throw ConfigError("scan_cost: positive arguments required");
    return static_cast<uint64_t>(T) * d_inner * (5 * static_cast<uint64_t>(d_state) + 1);
}

uint64_t scan_flop_counter() { return g_scan_macs; }
void scan_flop_counter_reset() { g_scan_macs = 0; }

}  // namespace mf
