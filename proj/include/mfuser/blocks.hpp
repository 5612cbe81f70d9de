#pragma once

// Parameter registry and small reusable network pieces (linear maps,
// multi-head attention, MLPs) shared by the fusion blocks, the frozen
// encoders and the decoder.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfuser/tensor.hpp"

namespace mf {

// Named parameter registry. Trainable entries are autodiff leaves; frozen
// entries are plain constant tensors that never receive gradients.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool trainable;
    };

    Tensor add(const std::string& name, Tensor t, bool trainable);
    Tensor trainable(const std::string& name, Shape s, std::vector<double> init);
    Tensor trainable_zeros(const std::string& name, Shape s);
    Tensor frozen(const std::string& name, Tensor t);

    const std::vector<Entry>& entries() const { return entries_; }
    const Tensor& get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::vector<Tensor> trainable_tensors() const;
    int64_t trainable_count() const;
    int64_t frozen_count() const;

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

struct Linear {
    Tensor w;  // [in x out]
    Tensor b;  // [out]
    Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
    int64_t in() const { return w.dim(0); }
    int64_t out() const { return w.dim(1); }
    int64_t param_count() const { return w.numel() + b.numel(); }
};

// Gaussian init scaled by 1/sqrt(fan_in); zero_init makes both w and b zero.
Linear make_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                   std::mt19937_64& rng, bool trainable, bool zero_init = false);

struct Mha {
    Linear wq, wk, wv, wo;
    int64_t heads;
    int64_t param_count() const {
        return wq.param_count() + wk.param_count() + wv.param_count() + wo.param_count();
    }
};

// width must be divisible by heads; zero_out zero-initializes the output
// projection so that residual use is an exact identity at init.
Mha make_mha(ParamStore& ps, const std::string& prefix, int64_t width, int64_t heads,
             std::mt19937_64& rng, bool trainable, bool zero_out = false);

// Scaled dot-product attention, queries from q [Tq x D], keys/values from
// kv [Tk x D].
Tensor mha_forward(const Mha& m, const Tensor& q, const Tensor& kv);

struct Mlp {
    Linear fc1, fc2;
    Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
    int64_t param_count() const { return fc1.param_count() + fc2.param_count(); }
};

Mlp make_mlp(ParamStore& ps, const std::string& prefix, int64_t width, int64_t hidden,
             std::mt19937_64& rng, bool trainable, bool zero_out = false);

struct LayerNormParams {
    Tensor gamma, beta;
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

LayerNormParams make_layer_norm(ParamStore& ps, const std::string& prefix, int64_t width,
                                bool trainable);

}  // namespace mf
