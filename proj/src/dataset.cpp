#include "mfuser/dataset.hpp"

#include <algorithm>
#include <cmath>

namespace mf {

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
    uint64_t x = a + 0x9e3779b97f4a7c15ULL + (b << 6) + (b >> 2);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Geometry {
    // disk
    double cx, cy, r;
    // square
    int64_t sx, sy, side;
    // stripe: band |x cos a + y sin a - off| < half
    double angle, off, half;
};

Geometry draw_geometry(std::mt19937_64& rng, int64_t size) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    Geometry g;
    double s = static_cast<double>(size);
    g.cx = s * (0.2 + 0.6 * u01(rng));
    g.cy = s * (0.2 + 0.6 * u01(rng));
    g.r = s * (0.10 + 0.10 * u01(rng));
    g.sx = static_cast<int64_t>(s * 0.7 * u01(rng));
    g.sy = static_cast<int64_t>(s * 0.7 * u01(rng));
    g.side = static_cast<int64_t>(s * (0.15 + 0.15 * u01(rng)));
    int ori = static_cast<int>(3.0 * u01(rng));
    g.angle = ori == 0 ? 0.0 : (ori == 1 ? M_PI / 2 : M_PI / 4);
    g.off = s * (0.25 + 0.5 * u01(rng));
    g.half = s * (0.04 + 0.04 * u01(rng));
    return g;
}

std::vector<int> paint_labels(const Geometry& g, int64_t size) {
    std::vector<int> labels(size * size, 0);
    for (int64_t y = 0; y < size; ++y)
        for (int64_t x = 0; x < size; ++x) {
            int& l = labels[y * size + x];
            double proj = x * std::cos(g.angle) + y * std::sin(g.angle);
            if (std::abs(proj - g.off) < g.half) l = 3;  // stripe
            if (x >= g.sx && x < g.sx + g.side && y >= g.sy && y < g.sy + g.side)
                l = 2;  // square
            double dx = x - g.cx, dy = y - g.cy;
            if (dx * dx + dy * dy < g.r * g.r) l = 1;  // disk on top
        }
    return labels;
}

}  // namespace

DomainSpec domain_spec(const std::string& name) {
    DomainSpec d;
    d.name = name;
    if (name == "source") {
        d.palette = {{{0.15, 0.18, 0.22},   // background
                      {0.85, 0.25, 0.20},   // disk
                      {0.20, 0.75, 0.30},   // square
                      {0.25, 0.35, 0.85}}}; // stripe
        d.palette_jitter = 0.03;
        d.illumination = 1.0;
        d.noise = 0.02;
        d.texture_freq = 0.35;
        d.texture_amp = 0.04;
        d.style_salt = 11;
    } else if (name == "shift_a") {
        // warmer palette, dimmer light, stronger texture
        d.palette = {{{0.30, 0.24, 0.12},
                      {0.95, 0.55, 0.15},
                      {0.55, 0.80, 0.20},
                      {0.15, 0.55, 0.65}}};
        d.palette_jitter = 0.05;
        d.illumination = 0.75;
        d.noise = 0.05;
        d.texture_freq = 0.8;
        d.texture_amp = 0.08;
        d.style_salt = 23;
    } else if (name == "shift_b") {
        // desaturated, bright, noisy
        d.palette = {{{0.45, 0.45, 0.50},
                      {0.70, 0.40, 0.45},
                      {0.40, 0.60, 0.45},
                      {0.50, 0.50, 0.75}}};
        d.palette_jitter = 0.06;
        d.illumination = 1.25;
        d.noise = 0.08;
        d.texture_freq = 0.15;
        d.texture_amp = 0.06;
        d.style_salt = 37;
    } else {
        throw ConfigError("unknown domain: " + name);
    }
    return d;
}

std::vector<SegSample> generate_dataset(const DomainSpec& spec, int64_t n,
                                        uint64_t seed, int64_t size) {
    if (n < 1) throw ConfigError("generate_dataset: n must be >= 1");
    std::vector<SegSample> out;
    out.reserve(n);
    for (int64_t i = 0; i < n; ++i) {
        std::mt19937_64 geo_rng(mix(seed, static_cast<uint64_t>(i)));
        std::mt19937_64 sty_rng(
            mix(mix(seed, static_cast<uint64_t>(i)), spec.style_salt));
        Geometry g = draw_geometry(geo_rng, size);
        SegSample s;
        s.H = s.W = size;
        s.labels = paint_labels(g, size);

        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::array<std::array<double, 3>, 4> colors;
        for (int c = 0; c < 4; ++c)
            for (int ch = 0; ch < 3; ++ch)
                colors[c][ch] = (spec.palette[c][ch] +
                                 spec.palette_jitter * gauss(sty_rng)) *
                                spec.illumination;
        double tex_angle = 2.0 * M_PI * u01(sty_rng);
        double tex_phase = 2.0 * M_PI * u01(sty_rng);

        s.image = Tensor::zeros({size, size, 3});
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) {
                int l = s.labels[y * size + x];
                double tex = 0.0;
                if (l == 0)
                    tex = spec.texture_amp *
                          std::sin(spec.texture_freq *
                                       (x * std::cos(tex_angle) +
                                        y * std::sin(tex_angle)) +
                                   tex_phase);
                for (int ch = 0; ch < 3; ++ch) {
                    double v = colors[l][ch] + tex + spec.noise * gauss(sty_rng);
                    s.image.data()[(y * size + x) * 3 + ch] = std::clamp(v, 0.0, 1.5);
                }
            }
        out.push_back(std::move(s));
    }
    return out;
}

SegSample augment_sample(const SegSample& s, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    SegSample out;
    out.H = s.H;
    out.W = s.W;
    bool flip = u01(rng) < 0.5;
    double cscale[3], cshift[3];
    for (int ch = 0; ch < 3; ++ch) {
        cscale[ch] = 0.9 + 0.2 * u01(rng);
        cshift[ch] = -0.05 + 0.1 * u01(rng);
    }
    out.labels.resize(s.labels.size());
    out.image = Tensor::zeros(s.image.shape());
    for (int64_t y = 0; y < s.H; ++y)
        for (int64_t x = 0; x < s.W; ++x) {
            int64_t sx = flip ? s.W - 1 - x : x;
            out.labels[y * s.W + x] = s.labels[y * s.W + sx];
            for (int ch = 0; ch < 3; ++ch)
                out.image.data()[(y * s.W + x) * 3 + ch] =
                    std::clamp(s.image.data()[(y * s.W + sx) * 3 + ch] * cscale[ch] +
                                   cshift[ch],
                               0.0, 1.5);
        }
    return out;
}

}  // namespace mf
