#pragma once

// Dense double-precision tensors with reverse-mode autodiff on an explicit
// tape. Ops record backward closures onto the thread-local active tape; with
// no active tape every op is a plain forward evaluation.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mf {

using Shape = std::vector<int64_t>;

struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated only when tracked
    bool requires_grad = false;
    bool tracked = false;      // participates in the active tape's adjoint pass
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

    static Tensor zeros(Shape s);
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);
    static Tensor from(Shape s, std::vector<double> d);
    static Tensor randn(Shape s, std::mt19937_64& rng, double stddev = 1.0);
    static Tensor uniform(Shape s, std::mt19937_64& rng, double lo, double hi);
    // Trainable leaf: requires_grad, grad buffer allocated.
    static Tensor param(Shape s, std::vector<double> d);
    static Tensor param_zeros(Shape s);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
    int64_t dim(size_t i) const { return impl_->shape.at(i); }
    int64_t rows() const { return impl_->shape.at(0); }
    int64_t cols() const { return impl_->shape.back(); }

    double* data() { return impl_->data.data(); }
    const double* data() const { return impl_->data.data(); }
    std::vector<double>& vec() { return impl_->data; }
    const std::vector<double>& vec() const { return impl_->data; }
    double value() const;  // scalar tensors only

    bool requires_grad() const { return impl_->requires_grad; }
    bool tracked() const { return impl_->tracked; }
    bool has_grad() const { return !impl_->grad.empty(); }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Ops append closures in execution order; backward()
// replays them once, in reverse, then clears the tape.
class Tape {
public:
    static Tape* current();

    void record(std::function<void()> bw) { nodes_.push_back(std::move(bw)); }
    size_t size() const { return nodes_.size(); }
    void backward(const Tensor& loss);
    void clear() { nodes_.clear(); }

    // RAII activation; nests correctly.
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    // RAII deactivation: ops inside run forward-only.
    class Pause {
    public:
        Pause();
        ~Pause();
        Pause(const Pause&) = delete;
        Pause& operator=(const Pause&) = delete;

    private:
        Tape* prev_;
    };

private:
    std::vector<std::function<void()>> nodes_;
};

void backward(const Tensor& loss);  // on the active tape

// ---- ops -------------------------------------------------------------
// All ops validate shapes, reject non-finite outputs, and support
// trailing-dim broadcast of the right operand where noted.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);  // same shape or row-broadcast b
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor gelu(const Tensor& a);

Tensor softmax_lastdim(const Tensor& a);
Tensor log_softmax_lastdim(const Tensor& a);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor sum(const Tensor& a);   // -> scalar
Tensor mean(const Tensor& a);  // -> scalar
Tensor mean_rows(const Tensor& a);  // [N x D] -> [1 x D]
// Adaptive mean pool along the row axis; group r covers rows
// [floor(r*N/out), floor((r+1)*N/out)).
Tensor mean_pool_rows(const Tensor& a, int64_t out_rows);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int64_t begin, int64_t end);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int64_t begin, int64_t end);

// Depthwise 1-D conv along the row (token) axis. x: [T x d], kernel: [k x d].
// Same-padding mode requires odd k; causal pads left only (tap k-1 is the
// current token).
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, bool causal);
// Depthwise 2-D conv on an H x W grid stored row-major as [H*W x d].
// kernel: [kh*kw x d], odd kh == kw, zero same-padding.
Tensor conv2d_depthwise(const Tensor& x, int64_t H, int64_t W,
                        const Tensor& kernel, int64_t k);

Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
// Bilinear 2x upsample of an H x W grid stored as [H*W x d] -> [4*H*W x d].
Tensor upsample2x_bilinear(const Tensor& x, int64_t H, int64_t W);

// Mean over rows with mask != 0 of -logp[r, target[r]]. Zero if mask empty.
Tensor nll_masked(const Tensor& logp, const std::vector<int>& targets,
                  const std::vector<double>& mask);
// Elementwise stable binary cross-entropy with logits, mean over mask != 0.
Tensor bce_with_logits_masked(const Tensor& logits, const Tensor& targets,
                              const Tensor& mask);

// ---- verification ----------------------------------------------------

// Max over coordinates of |analytic - central difference| /
// (|analytic| + |central| + eps). f must be a pure function of x.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         Tensor x, double h);

}  // namespace mf
