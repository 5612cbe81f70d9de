#include "mfuser/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mf {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) {
        if (d <= 0) throw ShapeError("nonpositive dimension in shape " + shape_str(s));
        n *= d;
    }
    return n;
}

// ---- Tensor ------------------------------------------------------------

static std::shared_ptr<TensorImpl> make_impl(Shape s, std::vector<double> d) {
    auto impl = std::make_shared<TensorImpl>();
    int64_t n = shape_numel(s);
    if (n != static_cast<int64_t>(d.size()))
        throw ShapeError("data length " + std::to_string(d.size()) +
                         " does not match shape " + shape_str(s));
    impl->shape = std::move(s);
    impl->data = std::move(d);
    return impl;
}

Tensor Tensor::zeros(Shape s) {
    int64_t n = shape_numel(s);
    return Tensor(make_impl(std::move(s), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape s, double v) {
    int64_t n = shape_numel(s);
    return Tensor(make_impl(std::move(s), std::vector<double>(n, v)));
}

Tensor Tensor::scalar(double v) { return full({1}, v); }

Tensor Tensor::from(Shape s, std::vector<double> d) {
    return Tensor(make_impl(std::move(s), std::move(d)));
}

Tensor Tensor::randn(Shape s, std::mt19937_64& rng, double stddev) {
    int64_t n = shape_numel(s);
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> d(n);
    for (auto& v : d) v = dist(rng);
    return Tensor(make_impl(std::move(s), std::move(d)));
}

Tensor Tensor::uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
    int64_t n = shape_numel(s);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> d(n);
    for (auto& v : d) v = dist(rng);
    return Tensor(make_impl(std::move(s), std::move(d)));
}

Tensor Tensor::param(Shape s, std::vector<double> d) {
    auto impl = make_impl(std::move(s), std::move(d));
    impl->requires_grad = true;
    impl->tracked = true;
    impl->grad.assign(impl->data.size(), 0.0);
    return Tensor(impl);
}

Tensor Tensor::param_zeros(Shape s) {
    int64_t n = shape_numel(s);
    return param(std::move(s), std::vector<double>(n, 0.0));
}

double Tensor::value() const {
    if (numel() != 1) throw ContractError("value() requires a scalar tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

std::vector<double>& Tensor::grad() {
    if (impl_->grad.empty()) throw ContractError("tensor has no grad buffer");
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (impl_->grad.empty()) throw ContractError("tensor has no grad buffer");
    return impl_->grad;
}

void Tensor::zero_grad() {
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

// ---- Tape ----------------------------------------------------------------

static thread_local Tape* g_current_tape = nullptr;

Tape* Tape::current() { return g_current_tape; }

Tape::Scope::Scope(Tape& t) : prev_(g_current_tape) { g_current_tape = &t; }
Tape::Scope::~Scope() { g_current_tape = prev_; }

Tape::Pause::Pause() : prev_(g_current_tape) { g_current_tape = nullptr; }
Tape::Pause::~Pause() { g_current_tape = prev_; }

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (nodes_.empty()) throw ContractError("backward on an empty tape");
    if (!loss.tracked()) throw ContractError("loss is not attached to this tape");
    loss.impl()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
}

void backward(const Tensor& loss) {
    Tape* t = Tape::current();
    if (!t) throw ContractError("backward called with no active tape");
    t->backward(loss);
}

// ---- op helpers ------------------------------------------------------

namespace {

bool want_track(std::initializer_list<const Tensor*> ins) {
    if (!Tape::current()) return false;
    for (const Tensor* t : ins)
        if (t->defined() && t->impl()->tracked) return true;
    return false;
}

Tensor make_out(Shape s, bool tracked) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(s);
    impl->data.assign(shape_numel(impl->shape), 0.0);
    if (tracked) {
        impl->tracked = true;
        impl->grad.assign(impl->data.size(), 0.0);
    }
    return Tensor(impl);
}

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.vec())
        if (!std::isfinite(v))
            throw NumericError(std::string("non-finite value produced by ") + op);
}

using ImplPtr = std::shared_ptr<TensorImpl>;

bool wants(const ImplPtr& p) { return p->tracked; }

// Broadcast classification for binary elementwise ops: exact shape match or
// right operand covering the trailing dimension of the left.
enum class Bcast { same, row };

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bcast::same;
    int64_t last = a.cols();
    if (b.numel() == last &&
        (b.shape().size() == 1 || (b.shape().size() == 2 && b.dim(0) == 1)))
        return Bcast::row;
    throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
}

}  // namespace

// ---- linear algebra --------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
        throw ShapeError("matmul: operands must be rank-2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    const int64_t M = a.dim(0), K = a.dim(1), Kb = b.dim(0), N = b.dim(1);
    if (K != Kb)
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    bool tr = want_track({&a, &b});
    Tensor out = make_out({M, N}, tr);
    const double* A = a.data();
    const double* B = b.data();
    double* C = out.data();
    for (int64_t i = 0; i < M; ++i) {
        const double* Ai = A + i * K;
        double* Ci = C + i * N;
        for (int64_t k = 0; k < K; ++k) {
            double aik = Ai[k];
            if (aik == 0.0) continue;
            const double* Bk = B + k * N;
            for (int64_t j = 0; j < N; ++j) Ci[j] += aik * Bk[j];
        }
    }
    check_finite(out, "matmul");
    if (tr) {
        ImplPtr ia = a.impl(), ib = b.impl(), io = out.impl();
        Tape::current()->record([ia, ib, io, M, K, N] {
            const double* g = io->grad.data();
            if (wants(ia)) {
                double* ga = ia->grad.data();
                const double* B = ib->data.data();
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t k = 0; k < K; ++k) {
                        const double* gi = g + i * N;
                        const double* Bk = B + k * N;
                        double acc = 0.0;
                        for (int64_t j = 0; j < N; ++j) acc += gi[j] * Bk[j];
                        ga[i * K + k] += acc;
                    }
            }
            if (wants(ib)) {
                double* gb = ib->grad.data();
                const double* A = ia->data.data();
                for (int64_t i = 0; i < M; ++i) {
                    const double* gi = g + i * N;
                    for (int64_t k = 0; k < K; ++k) {
                        double aik = A[i * K + k];
                        if (aik == 0.0) continue;
                        double* gbk = gb + k * N;
                        for (int64_t j = 0; j < N; ++j) gbk[j] += aik * gi[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2)
        throw ShapeError("transpose: rank-2 required, got " + shape_str(a.shape()));
    const int64_t M = a.dim(0), N = a.dim(1);
    bool tr = want_track({&a});
    Tensor out = make_out({N, M}, tr);
    for (int64_t i = 0; i < M; ++i)
        for (int64_t j = 0; j < N; ++j) out.data()[j * M + i] = a.data()[i * N + j];
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, M, N] {
            if (!wants(ia)) return;
            for (int64_t i = 0; i < M; ++i)
                for (int64_t j = 0; j < N; ++j)
                    ia->grad[i * N + j] += io->grad[j * M + i];
        });
    }
    return out;
}

// ---- binary elementwise ------------------------------------------------

namespace {

template <typename FwdF, typename BwdF>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, FwdF fwd, BwdF bwd) {
    Bcast kind = bcast_kind(a, b, name);
    bool tr = want_track({&a, &b});
    Tensor out = make_out(a.shape(), tr);
    const int64_t n = a.numel(), last = a.cols();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    if (kind == Bcast::same)
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
    else
        for (int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i % last]);
    check_finite(out, name);
    if (tr) {
        ImplPtr ia = a.impl(), ib = b.impl(), io = out.impl();
        Tape::current()->record([ia, ib, io, kind, n, last, bwd] {
            const double* g = io->grad.data();
            const double* pa = ia->data.data();
            const double* pb = ib->data.data();
            double* ga = wants(ia) ? ia->grad.data() : nullptr;
            double* gb = wants(ib) ? ib->grad.data() : nullptr;
            for (int64_t i = 0; i < n; ++i) {
                int64_t j = (kind == Bcast::same) ? i : i % last;
                double da, db;
                bwd(pa[i], pb[j], da, db);
                if (ga) ga[i] += g[i] * da;
                if (gb) gb[j] += g[i] * db;
            }
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                     [](double, double, double& da, double& db) { da = 1.0; db = 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                     [](double, double, double& da, double& db) { da = 1.0; db = -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                     [](double x, double y, double& da, double& db) { da = y; db = x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                     [](double x, double y, double& da, double& db) {
                         da = 1.0 / y;
                         db = -x / (y * y);
                     });
}

// ---- unary elementwise -------------------------------------------------

namespace {

template <typename FwdF, typename BwdF>
Tensor unary_op(const Tensor& a, const char* name, FwdF fwd, BwdF dfdx) {
    bool tr = want_track({&a});
    Tensor out = make_out(a.shape(), tr);
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = fwd(a.data()[i]);
    check_finite(out, name);
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, n, dfdx] {
            if (!wants(ia)) return;
            for (int64_t i = 0; i < n; ++i)
                ia->grad[i] += io->grad[i] * dfdx(ia->data[i], io->data[i]);
        });
    }
    return out;
}

double stable_softplus(double x) {
    if (x > 30.0) return x;
    if (x < -30.0) return std::exp(x);
    return std::log1p(std::exp(x));
}

double sigmoid_s(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, "scale", [c](double x) { return c * x; },
                    [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& a, double c) {
    return unary_op(a, "add_scalar", [c](double x) { return x + c; },
                    [](double, double) { return 1.0; });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(a, "log", [](double x) { return std::log(x); },
                    [](double x, double) { return 1.0 / x; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, "sigmoid", [](double x) { return sigmoid_s(x); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
    return unary_op(a, "silu", [](double x) { return x * sigmoid_s(x); },
                    [](double x, double) {
                        double s = sigmoid_s(x);
                        return s * (1.0 + x * (1.0 - s));
                    });
}

Tensor softplus(const Tensor& a) {
    return unary_op(a, "softplus", [](double x) { return stable_softplus(x); },
                    [](double x, double) { return sigmoid_s(x); });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(a, "gelu",
                    [=](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
                    [=](double x, double) {
                        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                               x * inv_sqrt2pi * std::exp(-0.5 * x * x);
                    });
}

// ---- row-wise normalizations -------------------------------------------

Tensor softmax_lastdim(const Tensor& a) {
    const int64_t last = a.cols(), rows = a.numel() / last;
    bool tr = want_track({&a});
    Tensor out = make_out(a.shape(), tr);
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a.data() + r * last;
        double* y = out.data() + r * last;
        double m = x[0];
        for (int64_t j = 1; j < last; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < last; ++j) {
            y[j] = std::exp(x[j] - m);
            z += y[j];
        }
        for (int64_t j = 0; j < last; ++j) y[j] /= z;
    }
    check_finite(out, "softmax");
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, rows, last] {
            if (!wants(ia)) return;
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = io->data.data() + r * last;
                const double* g = io->grad.data() + r * last;
                double* ga = ia->grad.data() + r * last;
                double dot = 0.0;
                for (int64_t j = 0; j < last; ++j) dot += g[j] * y[j];
                for (int64_t j = 0; j < last; ++j) ga[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor log_softmax_lastdim(const Tensor& a) {
    const int64_t last = a.cols(), rows = a.numel() / last;
    bool tr = want_track({&a});
    Tensor out = make_out(a.shape(), tr);
    for (int64_t r = 0; r < rows; ++r) {
        const double* x = a.data() + r * last;
        double* y = out.data() + r * last;
        double m = x[0];
        for (int64_t j = 1; j < last; ++j) m = std::max(m, x[j]);
        double z = 0.0;
        for (int64_t j = 0; j < last; ++j) z += std::exp(x[j] - m);
        double lz = m + std::log(z);
        for (int64_t j = 0; j < last; ++j) y[j] = x[j] - lz;
    }
    check_finite(out, "log_softmax");
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, rows, last] {
            if (!wants(ia)) return;
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = io->data.data() + r * last;
                const double* g = io->grad.data() + r * last;
                double* ga = ia->grad.data() + r * last;
                double gsum = 0.0;
                for (int64_t j = 0; j < last; ++j) gsum += g[j];
                for (int64_t j = 0; j < last; ++j) ga[j] += g[j] - std::exp(y[j]) * gsum;
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const int64_t last = x.cols(), rows = x.numel() / last;
    if (gamma.numel() != last || beta.numel() != last)
        throw ShapeError("layer_norm: scale/shift must cover the last axis");
    bool tr = want_track({&x, &gamma, &beta});
    Tensor out = make_out(x.shape(), tr);
    std::vector<double> xhat;  // cached for backward only when tracked
    std::vector<double> rstd;
    if (tr) {
        xhat.resize(x.numel());
        rstd.resize(rows);
    }
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = x.data() + r * last;
        double* yr = out.data() + r * last;
        double mu = 0.0;
        for (int64_t j = 0; j < last; ++j) mu += xr[j];
        mu /= last;
        double var = 0.0;
        for (int64_t j = 0; j < last; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= last;
        double rs = 1.0 / std::sqrt(var + eps);
        for (int64_t j = 0; j < last; ++j) {
            double xh = (xr[j] - mu) * rs;
            if (tr) xhat[r * last + j] = xh;
            yr[j] = xh * gamma.data()[j] + beta.data()[j];
        }
        if (tr) rstd[r] = rs;
    }
    check_finite(out, "layer_norm");
    if (tr) {
        ImplPtr ix = x.impl(), ig = gamma.impl(), ibt = beta.impl(), io = out.impl();
        auto xh = std::make_shared<std::vector<double>>(std::move(xhat));
        auto rs = std::make_shared<std::vector<double>>(std::move(rstd));
        Tape::current()->record([ix, ig, ibt, io, xh, rs, rows, last] {
            const double* g = io->grad.data();
            for (int64_t r = 0; r < rows; ++r) {
                const double* gr = g + r * last;
                const double* xhr = xh->data() + r * last;
                if (wants(ig))
                    for (int64_t j = 0; j < last; ++j)
                        ig->grad[j] += gr[j] * xhr[j];
                if (wants(ibt))
                    for (int64_t j = 0; j < last; ++j) ibt->grad[j] += gr[j];
                if (wants(ix)) {
                    double m1 = 0.0, m2 = 0.0;
                    for (int64_t j = 0; j < last; ++j) {
                        double gg = gr[j] * ig->data[j];
                        m1 += gg;
                        m2 += gg * xhr[j];
                    }
                    m1 /= last;
                    m2 /= last;
                    for (int64_t j = 0; j < last; ++j) {
                        double gg = gr[j] * ig->data[j];
                        ix->grad[r * last + j] += (gg - m1 - xhr[j] * m2) * (*rs)[r];
                    }
                }
            }
        });
    }
    return out;
}

// ---- reductions ----------------------------------------------------------

Tensor sum(const Tensor& a) {
    bool tr = want_track({&a});
    Tensor out = make_out({1}, tr);
    double s = 0.0;
    for (double v : a.vec()) s += v;
    out.data()[0] = s;
    check_finite(out, "sum");
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io] {
            if (!wants(ia)) return;
            double g = io->grad[0];
            for (auto& gv : ia->grad) gv += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / a.numel()); }

Tensor mean_rows(const Tensor& a) {
    const int64_t N = a.dim(0), D = a.numel() / N;
    bool tr = want_track({&a});
    Tensor out = make_out({1, D}, tr);
    for (int64_t r = 0; r < N; ++r)
        for (int64_t j = 0; j < D; ++j) out.data()[j] += a.data()[r * D + j];
    for (int64_t j = 0; j < D; ++j) out.data()[j] /= N;
    check_finite(out, "mean_rows");
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, N, D] {
            if (!wants(ia)) return;
            for (int64_t r = 0; r < N; ++r)
                for (int64_t j = 0; j < D; ++j)
                    ia->grad[r * D + j] += io->grad[j] / N;
        });
    }
    return out;
}

Tensor mean_pool_rows(const Tensor& a, int64_t out_rows) {
    const int64_t N = a.dim(0), D = a.cols();
    if (out_rows < 1 || out_rows > N)
        throw ShapeError("mean_pool_rows: out_rows must be in [1, N]");
    bool tr = want_track({&a});
    Tensor out = make_out({out_rows, D}, tr);
    for (int64_t r = 0; r < out_rows; ++r) {
        int64_t lo = r * N / out_rows, hi = (r + 1) * N / out_rows;
        for (int64_t i = lo; i < hi; ++i)
            for (int64_t j = 0; j < D; ++j)
                out.data()[r * D + j] += a.data()[i * D + j];
        for (int64_t j = 0; j < D; ++j) out.data()[r * D + j] /= (hi - lo);
    }
    check_finite(out, "mean_pool_rows");
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, N, D, out_rows] {
            if (!wants(ia)) return;
            for (int64_t r = 0; r < out_rows; ++r) {
                int64_t lo = r * N / out_rows, hi = (r + 1) * N / out_rows;
                for (int64_t i = lo; i < hi; ++i)
                    for (int64_t j = 0; j < D; ++j)
                        ia->grad[i * D + j] += io->grad[r * D + j] / (hi - lo);
            }
        });
    }
    return out;
}

// ---- concat / slice ------------------------------------------------------

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: empty input");
    const int64_t D = parts[0].cols();
    int64_t total = 0;
    std::initializer_list<const Tensor*> dummy{};
    (void)dummy;
    bool tr = false;
    for (const Tensor& p : parts) {
        if (p.shape().size() != 2 || p.cols() != D)
            throw ShapeError("concat_rows: column mismatch");
        total += p.dim(0);
        if (Tape::current() && p.tracked()) tr = true;
    }
    Tensor out = make_out({total, D}, tr);
    int64_t off = 0;
    for (const Tensor& p : parts) {
        std::copy(p.vec().begin(), p.vec().end(), out.data() + off);
        off += p.numel();
    }
    if (tr) {
        std::vector<ImplPtr> ins;
        for (const Tensor& p : parts) ins.push_back(p.impl());
        ImplPtr io = out.impl();
        Tape::current()->record([ins, io] {
            int64_t off = 0;
            for (const ImplPtr& p : ins) {
                if (wants(p))
                    for (size_t i = 0; i < p->data.size(); ++i)
                        p->grad[i] += io->grad[off + i];
                off += static_cast<int64_t>(p->data.size());
            }
        });
    }
    return out;
}

Tensor slice_rows(const Tensor& a, int64_t begin, int64_t end) {
    const int64_t N = a.dim(0), D = a.numel() / N;
    if (begin < 0 || end > N || begin >= end)
        throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") for " + shape_str(a.shape()));
    bool tr = want_track({&a});
    Tensor out = make_out({end - begin, D}, tr);
    std::copy(a.data() + begin * D, a.data() + end * D, out.data());
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, begin, D] {
            if (!wants(ia)) return;
            for (size_t i = 0; i < io->data.size(); ++i)
                ia->grad[begin * D + i] += io->grad[i];
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: empty input");
    const int64_t N = parts[0].dim(0);
    int64_t total = 0;
    bool tr = false;
    for (const Tensor& p : parts) {
        if (p.shape().size() != 2 || p.dim(0) != N)
            throw ShapeError("concat_cols: row mismatch");
        total += p.dim(1);
        if (Tape::current() && p.tracked()) tr = true;
    }
    Tensor out = make_out({N, total}, tr);
    int64_t off = 0;
    for (const Tensor& p : parts) {
        int64_t d = p.dim(1);
        for (int64_t r = 0; r < N; ++r)
            std::copy(p.data() + r * d, p.data() + (r + 1) * d,
                      out.data() + r * total + off);
        off += d;
    }
    if (tr) {
        std::vector<ImplPtr> ins;
        for (const Tensor& p : parts) ins.push_back(p.impl());
        ImplPtr io = out.impl();
        Tape::current()->record([ins, io, N, total] {
            int64_t off = 0;
            for (const ImplPtr& p : ins) {
                int64_t d = p->shape[1];
                if (wants(p))
                    for (int64_t r = 0; r < N; ++r)
                        for (int64_t j = 0; j < d; ++j)
                            p->grad[r * d + j] += io->grad[r * total + off + j];
                off += d;
            }
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int64_t begin, int64_t end) {
    if (a.shape().size() != 2) throw ShapeError("slice_cols: rank-2 required");
    const int64_t N = a.dim(0), D = a.dim(1);
    if (begin < 0 || end > D || begin >= end)
        throw ShapeError("slice_cols: bad range for " + shape_str(a.shape()));
    const int64_t d = end - begin;
    bool tr = want_track({&a});
    Tensor out = make_out({N, d}, tr);
    for (int64_t r = 0; r < N; ++r)
        std::copy(a.data() + r * D + begin, a.data() + r * D + end, out.data() + r * d);
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        Tape::current()->record([ia, io, N, D, d, begin] {
            if (!wants(ia)) return;
            for (int64_t r = 0; r < N; ++r)
                for (int64_t j = 0; j < d; ++j)
                    ia->grad[r * D + begin + j] += io->grad[r * d + j];
        });
    }
    return out;
}

// ---- convolutions ----------------------------------------------------

Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, bool causal) {
    if (x.shape().size() != 2 || kernel.shape().size() != 2)
        throw ShapeError("conv1d: rank-2 operands required");
    const int64_t T = x.dim(0), d = x.dim(1), k = kernel.dim(0);
    if (kernel.dim(1) != d)
        throw ShapeError("conv1d: kernel channels " + std::to_string(kernel.dim(1)) +
                         " != input channels " + std::to_string(d));
    if (k < 1) throw ConfigError("conv1d: kernel size must be >= 1");
    if (!causal && k % 2 == 0)
        throw ConfigError("conv1d: same-padding mode requires odd kernel size");
    // tap j reads x[t + j - (k-1)] in causal mode, x[t + j - k/2] otherwise
    const int64_t shift = causal ? (k - 1) : k / 2;
    bool tr = want_track({&x, &kernel});
    Tensor out = make_out({T, d}, tr);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t j = 0; j < k; ++j) {
            int64_t s = t + j - shift;
            if (s < 0 || s >= T) continue;
            const double* xs = x.data() + s * d;
            const double* kj = kernel.data() + j * d;
            double* ot = out.data() + t * d;
            for (int64_t c = 0; c < d; ++c) ot[c] += kj[c] * xs[c];
        }
    check_finite(out, "conv1d");
    if (tr) {
        ImplPtr ix = x.impl(), ik = kernel.impl(), io = out.impl();
        Tape::current()->record([ix, ik, io, T, d, k, shift] {
            for (int64_t t = 0; t < T; ++t)
                for (int64_t j = 0; j < k; ++j) {
                    int64_t s = t + j - shift;
                    if (s < 0 || s >= T) continue;
                    const double* g = io->grad.data() + t * d;
                    if (wants(ix)) {
                        const double* kj = ik->data.data() + j * d;
                        double* gx = ix->grad.data() + s * d;
                        for (int64_t c = 0; c < d; ++c) gx[c] += g[c] * kj[c];
                    }
                    if (wants(ik)) {
                        const double* xs = ix->data.data() + s * d;
                        double* gk = ik->grad.data() + j * d;
                        for (int64_t c = 0; c < d; ++c) gk[c] += g[c] * xs[c];
                    }
                }
        });
    }
    return out;
}

Tensor conv2d_depthwise(const Tensor& x, int64_t H, int64_t W, const Tensor& kernel,
                        int64_t k) {
    if (x.shape().size() != 2) throw ShapeError("conv2d: rank-2 token layout required");
    const int64_t d = x.dim(1);
    if (x.dim(0) != H * W)
        throw ShapeError("conv2d: token count " + std::to_string(x.dim(0)) +
                         " does not match grid " + std::to_string(H) + "x" + std::to_string(W));
    if (k % 2 == 0 || k < 1) throw ConfigError("conv2d: odd kernel size required");
    if (kernel.dim(0) != k * k || kernel.dim(1) != d)
        throw ShapeError("conv2d: kernel shape mismatch");
    const int64_t half = k / 2;
    bool tr = want_track({&x, &kernel});
    Tensor out = make_out({H * W, d}, tr);
    for (int64_t i = 0; i < H; ++i)
        for (int64_t j = 0; j < W; ++j)
            for (int64_t u = 0; u < k; ++u)
                for (int64_t v = 0; v < k; ++v) {
                    int64_t si = i + u - half, sj = j + v - half;
                    if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                    const double* xs = x.data() + (si * W + sj) * d;
                    const double* kw = kernel.data() + (u * k + v) * d;
                    double* ot = out.data() + (i * W + j) * d;
                    for (int64_t c = 0; c < d; ++c) ot[c] += kw[c] * xs[c];
                }
    check_finite(out, "conv2d");
    if (tr) {
        ImplPtr ix = x.impl(), ik = kernel.impl(), io = out.impl();
        Tape::current()->record([ix, ik, io, H, W, d, k, half] {
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j)
                    for (int64_t u = 0; u < k; ++u)
                        for (int64_t v = 0; v < k; ++v) {
                            int64_t si = i + u - half, sj = j + v - half;
                            if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                            const double* g = io->grad.data() + (i * W + j) * d;
                            if (wants(ix)) {
                                const double* kw = ik->data.data() + (u * k + v) * d;
                                double* gx = ix->grad.data() + (si * W + sj) * d;
                                for (int64_t c = 0; c < d; ++c) gx[c] += g[c] * kw[c];
                            }
                            if (wants(ik)) {
                                const double* xs = ix->data.data() + (si * W + sj) * d;
                                double* gk = ik->grad.data() + (u * k + v) * d;
                                for (int64_t c = 0; c < d; ++c) gk[c] += g[c] * xs[c];
                            }
                        }
        });
    }
    return out;
}

// ---- geometry ----------------------------------------------------------

Tensor l2_normalize_rows(const Tensor& a, double eps) {
    const int64_t N = a.dim(0), D = a.numel() / N;
    bool tr = want_track({&a});
    Tensor out = make_out(a.shape(), tr);
    std::vector<double> norms(N);
    for (int64_t r = 0; r < N; ++r) {
        const double* xr = a.data() + r * D;
        double s = 0.0;
        for (int64_t j = 0; j < D; ++j) s += xr[j] * xr[j];
        double n = std::sqrt(s + eps);
        norms[r] = n;
        for (int64_t j = 0; j < D; ++j) out.data()[r * D + j] = xr[j] / n;
    }
    check_finite(out, "l2_normalize_rows");
    if (tr) {
        ImplPtr ia = a.impl(), io = out.impl();
        auto nm = std::make_shared<std::vector<double>>(std::move(norms));
        Tape::current()->record([ia, io, nm, N, D] {
            if (!wants(ia)) return;
            for (int64_t r = 0; r < N; ++r) {
                const double* x = ia->data.data() + r * D;
                const double* g = io->grad.data() + r * D;
                double n = (*nm)[r];
                double dot = 0.0;
                for (int64_t j = 0; j < D; ++j) dot += g[j] * x[j];
                for (int64_t j = 0; j < D; ++j)
                    ia->grad[r * D + j] += g[j] / n - x[j] * dot / (n * n * n);
            }
        });
    }
    return out;
}

Tensor upsample2x_bilinear(const Tensor& x, int64_t H, int64_t W) {
    const int64_t d = x.dim(1);
    if (x.dim(0) != H * W) throw ShapeError("upsample2x: grid mismatch");
    const int64_t Ho = 2 * H, Wo = 2 * W;
    bool tr = want_track({&x});
    Tensor out = make_out({Ho * Wo, d}, tr);
    // (source coordinate, weight) pairs per output axis position
    auto taps = [](int64_t o, int64_t n, int64_t& i0, int64_t& i1, double& w1) {
        double src = (o + 0.5) * 0.5 - 0.5;
        double f = std::floor(src);
        i0 = static_cast<int64_t>(f);
        i1 = i0 + 1;
        w1 = src - f;
        i0 = std::clamp<int64_t>(i0, 0, n - 1);
        i1 = std::clamp<int64_t>(i1, 0, n - 1);
    };
    for (int64_t oi = 0; oi < Ho; ++oi) {
        int64_t r0, r1;
        double wr;
        taps(oi, H, r0, r1, wr);
        for (int64_t oj = 0; oj < Wo; ++oj) {
            int64_t c0, c1;
            double wc;
            taps(oj, W, c0, c1, wc);
            double* o = out.data() + (oi * Wo + oj) * d;
            const double* p00 = x.data() + (r0 * W + c0) * d;
            const double* p01 = x.data() + (r0 * W + c1) * d;
            const double* p10 = x.data() + (r1 * W + c0) * d;
            const double* p11 = x.data() + (r1 * W + c1) * d;
            for (int64_t c = 0; c < d; ++c)
                o[c] = (1 - wr) * ((1 - wc) * p00[c] + wc * p01[c]) +
                       wr * ((1 - wc) * p10[c] + wc * p11[c]);
        }
    }
    check_finite(out, "upsample2x_bilinear");
    if (tr) {
        ImplPtr ix = x.impl(), io = out.impl();
        Tape::current()->record([ix, io, H, W, d, taps] {
            if (!wants(ix)) return;
            const int64_t Ho = 2 * H, Wo = 2 * W;
            for (int64_t oi = 0; oi < Ho; ++oi) {
                int64_t r0, r1;
                double wr;
                taps(oi, H, r0, r1, wr);
                for (int64_t oj = 0; oj < Wo; ++oj) {
                    int64_t c0, c1;
                    double wc;
                    taps(oj, W, c0, c1, wc);
                    const double* g = io->grad.data() + (oi * Wo + oj) * d;
                    double* g00 = ix->grad.data() + (r0 * W + c0) * d;
                    double* g01 = ix->grad.data() + (r0 * W + c1) * d;
                    double* g10 = ix->grad.data() + (r1 * W + c0) * d;
                    double* g11 = ix->grad.data() + (r1 * W + c1) * d;
                    for (int64_t c = 0; c < d; ++c) {
                        g00[c] += (1 - wr) * (1 - wc) * g[c];
                        g01[c] += (1 - wr) * wc * g[c];
                        g10[c] += wr * (1 - wc) * g[c];
                        g11[c] += wr * wc * g[c];
                    }
                }
            }
        });
    }
    return out;
}

// ---- losses --------------------------------------------------------------

Tensor nll_masked(const Tensor& logp, const std::vector<int>& targets,
                  const std::vector<double>& mask) {
    const int64_t N = logp.dim(0), C = logp.dim(1);
    if (static_cast<int64_t>(targets.size()) != N ||
        static_cast<int64_t>(mask.size()) != N)
        throw ShapeError("nll_masked: target/mask length mismatch");
    double count = 0.0;
    for (double m : mask) count += (m != 0.0) ? 1.0 : 0.0;
    bool tr = want_track({&logp});
    Tensor out = make_out({1}, tr);
    if (count > 0.0) {
        double acc = 0.0;
        for (int64_t r = 0; r < N; ++r) {
            if (mask[r] == 0.0) continue;
            int t = targets[r];
            if (t < 0 || t >= C) throw ContractError("nll_masked: target out of range");
            acc -= logp.data()[r * C + t];
        }
        out.data()[0] = acc / count;
    }
    check_finite(out, "nll_masked");
    if (tr) {
        ImplPtr il = logp.impl(), io = out.impl();
        auto tg = std::make_shared<std::vector<int>>(targets);
        auto mk = std::make_shared<std::vector<double>>(mask);
        Tape::current()->record([il, io, tg, mk, N, C, count] {
            if (!wants(il) || count == 0.0) return;
            double g = io->grad[0] / count;
            for (int64_t r = 0; r < N; ++r)
                if ((*mk)[r] != 0.0) il->grad[r * C + (*tg)[r]] -= g;
        });
    }
    return out;
}

Tensor bce_with_logits_masked(const Tensor& logits, const Tensor& targets,
                              const Tensor& mask) {
    if (logits.shape() != targets.shape() || logits.shape() != mask.shape())
        throw ShapeError("bce_with_logits: shape mismatch");
    const int64_t n = logits.numel();
    double count = 0.0;
    for (double m : mask.vec()) count += (m != 0.0) ? 1.0 : 0.0;
    bool tr = want_track({&logits});
    Tensor out = make_out({1}, tr);
    if (count > 0.0) {
        double acc = 0.0;
        for (int64_t i = 0; i < n; ++i) {
            if (mask.data()[i] == 0.0) continue;
            double x = logits.data()[i], t = targets.data()[i];
            acc += stable_softplus(-x) + (1.0 - t) * x;
        }
        out.data()[0] = acc / count;
    }
    check_finite(out, "bce_with_logits");
    if (tr) {
        ImplPtr il = logits.impl(), it = targets.impl(), im = mask.impl(), io = out.impl();
        Tape::current()->record([il, it, im, io, n, count] {
            if (!wants(il) || count == 0.0) return;
            double g = io->grad[0] / count;
            for (int64_t i = 0; i < n; ++i) {
                if (im->data[i] == 0.0) continue;
                il->grad[i] += g * (sigmoid_s(il->data[i]) - it->data[i]);
            }
        });
    }
    return out;
}

// ---- finite differences ----------------------------------------------

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                         double h) {
    if (h <= 0.0) throw ContractError("finite_diff_check: h must be positive");
    if (!x.requires_grad())
        throw ContractError("finite_diff_check: x must be a trainable leaf");
    x.zero_grad();
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = f(x);
        tape.backward(loss);
    }
    std::vector<double> analytic = x.grad();
    const double eps = 1e-12;
    double worst = 0.0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        double saved = x.data()[i];
        x.data()[i] = saved + h;
        double fp = f(x).value();
        x.data()[i] = saved - h;
        double fm = f(x).value();
        x.data()[i] = saved;
        double num = (fp - fm) / (2.0 * h);
        if (!std::isfinite(num) || !std::isfinite(analytic[i]))
            throw NumericError("finite_diff_check: NaN at coordinate " + std::to_string(i));
        double rel = std::abs(analytic[i] - num) /
                     (std::abs(analytic[i]) + std::abs(num) + eps);
        worst = std::max(worst, rel);
    }
    return worst;
}

}  // namespace mf
