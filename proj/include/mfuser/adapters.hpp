#pragma once

// Adapter interface shared by the MVFuser and the baseline adapters used in
// the efficiency and fusion ablations. Every adapter maps the two encoder
// token streams to additive offsets and is an exact identity when freshly
// initialized (zero output projections).

#include <memory>
#include <string>

#include "mfuser/mvfuser.hpp"

namespace mf {

enum class AdapterMode {
    mvfuser,
    mvfuser_separate,
    self_attn_concat,
    self_attn_separate,
    conv_adapter,
    cross_attn_adapter,
    none,
};

AdapterMode adapter_mode_from_string(const std::string& s);
std::string adapter_mode_name(AdapterMode m);

struct AdapterOffsets {
    Tensor d_vfm, d_vlm;
};

class Adapter {
public:
    virtual ~Adapter() = default;
    virtual AdapterOffsets offsets(const TokenSequence& x_vfm,
                                   const TokenSequence& x_vlm) const = 0;
    virtual int64_t param_count() const = 0;
    // Analytic forward multiply-add count at sequence length T per stream.
    virtual uint64_t flop_count(int64_t T) const = 0;
    virtual std::string name() const = 0;
};

struct AdapterDims {
    int64_t d_vfm = 0;
    int64_t d_vlm = 0;
    int64_t d_low = 0;
    int64_t d_state = 16;
    int64_t learnable_tokens = 16;  // cross-attention adapter only
};

std::unique_ptr<Adapter> make_adapter(AdapterMode mode, ParamStore& ps,
                                      const std::string& prefix, const AdapterDims& dims,
                                      std::mt19937_64& rng);

}  // namespace mf
