#pragma once

// Synthetic domain-shift data: disks, squares and stripes on a textured
// background. Geometry (hence the label map) depends only on the sample
// seed; colors, illumination, texture and noise are per-domain "style"
// knobs, so the same seed under two domains yields identical labels but
// different images.

#include <array>
#include <string>
#include <vector>

#include "mfuser/seghead.hpp"

namespace mf {

inline const std::vector<std::string>& class_names() {
    static const std::vector<std::string> kNames = {"background", "disk", "square",
                                                    "stripe"};
    return kNames;
}

struct DomainSpec {
    std::string name;
    std::array<std::array<double, 3>, 4> palette;  // mean RGB per class
    double palette_jitter = 0.0;  // per-sample color wobble
    double illumination = 1.0;    // global brightness scale
    double noise = 0.0;           // gaussian pixel noise stddev
    double texture_freq = 0.0;    // background sinusoid frequency
    double texture_amp = 0.0;
    uint64_t style_salt = 0;
};

// Presets: "source", "shift_a", "shift_b".
DomainSpec domain_spec(const std::string& name);

std::vector<SegSample> generate_dataset(const DomainSpec& spec, int64_t n,
                                        uint64_t seed, int64_t size = 64);

// Random horizontal flip plus channel-wise color jitter.
SegSample augment_sample(const SegSample& s, std::mt19937_64& rng);

}  // namespace mf
