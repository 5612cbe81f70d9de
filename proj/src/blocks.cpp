#include "mfuser/blocks.hpp"

#include <cmath>

namespace mf {

Tensor ParamStore::add(const std::string& name, Tensor t, bool trainable) {
    if (index_.count(name))
        throw ConfigError("parameter registered twice: " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, t, trainable});
    return t;
}

Tensor ParamStore::trainable(const std::string& name, Shape s, std::vector<double> init) {
    return add(name, Tensor::param(std::move(s), std::move(init)), true);
}

Tensor ParamStore::trainable_zeros(const std::string& name, Shape s) {
    return add(name, Tensor::param_zeros(std::move(s)), true);
}

Tensor ParamStore::frozen(const std::string& name, Tensor t) {
    if (t.requires_grad()) throw ContractError("frozen entry must not require grad: " + name);
    return add(name, t, false);
}

const Tensor& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
    return entries_[it->second].tensor;
}

std::vector<Tensor> ParamStore::trainable_tensors() const {
    std::vector<Tensor> out;
    for (const auto& e : entries_)
        if (e.trainable) out.push_back(e.tensor);
    return out;
}

int64_t ParamStore::trainable_count() const {
    int64_t n = 0;
    for (const auto& e : entries_)
        if (e.trainable) n += e.tensor.numel();
    return n;
}

int64_t ParamStore::frozen_count() const {
    int64_t n = 0;
    for (const auto& e : entries_)
        if (!e.trainable) n += e.tensor.numel();
    return n;
}

Linear make_linear(ParamStore& ps, const std::string& prefix, int64_t in, int64_t out,
                   std::mt19937_64& rng, bool trainable, bool zero_init) {
    Tensor w, b;
    if (zero_init) {
        w = Tensor::zeros({in, out});
        b = Tensor::zeros({out});
    } else {
        w = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)));
        b = Tensor::zeros({out});
    }
    if (trainable) {
        w = ps.trainable(prefix + ".w", w.shape(), w.vec());
        b = ps.trainable(prefix + ".b", b.shape(), b.vec());
    } else {
        w = ps.frozen(prefix + ".w", w);
        b = ps.frozen(prefix + ".b", b);
    }
    return {w, b};
}

Mha make_mha(ParamStore& ps, const std::string& prefix, int64_t width, int64_t heads,
             std::mt19937_64& rng, bool trainable, bool zero_out) {
    if (width % heads != 0)
        throw ConfigError("attention width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads));
    Mha m;
    m.heads = heads;
    m.wq = make_linear(ps, prefix + ".q", width, width, rng, trainable);
    m.wk = make_linear(ps, prefix + ".k", width, width, rng, trainable);
    m.wv = make_linear(ps, prefix + ".v", width, width, rng, trainable);
    m.wo = make_linear(ps, prefix + ".o", width, width, rng, trainable, zero_out);
    return m;
}

Tensor mha_forward(const Mha& m, const Tensor& q_in, const Tensor& kv_in) {
    const int64_t D = m.wq.in();
    const int64_t dh = D / m.heads;
    Tensor q = m.wq(q_in);
    Tensor k = m.wk(kv_in);
    Tensor v = m.wv(kv_in);
    std::vector<Tensor> heads_out;
    heads_out.reserve(m.heads);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int64_t h = 0; h < m.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        Tensor attn = softmax_lastdim(scale(matmul(qh, transpose(kh)), inv));
        heads_out.push_back(matmul(attn, vh));
    }
    return m.wo(m.heads == 1 ? heads_out[0] : concat_cols(heads_out));
}

Mlp make_mlp(ParamStore& ps, const std::string& prefix, int64_t width, int64_t hidden,
             std::mt19937_64& rng, bool trainable, bool zero_out) {
    Mlp mlp;
    mlp.fc1 = make_linear(ps, prefix + ".fc1", width, hidden, rng, trainable);
    mlp.fc2 = make_linear(ps, prefix + ".fc2", hidden, width, rng, trainable, zero_out);
    return mlp;
}

LayerNormParams make_layer_norm(ParamStore& ps, const std::string& prefix, int64_t width,
                                bool trainable) {
    Tensor g = Tensor::full({width}, 1.0);
    Tensor b = Tensor::zeros({width});
    if (trainable) {
        g = ps.trainable(prefix + ".g", g.shape(), g.vec());
        b = ps.trainable(prefix + ".b", b.shape(), b.vec());
    } else {
        g = ps.frozen(prefix + ".g", g);
        b = ps.frozen(prefix + ".b", b);
    }
    return {g, b};
}

}  // namespace mf
