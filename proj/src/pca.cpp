#include "mfuser/pca.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>

namespace mf {

PcaResult pca_components(const Tensor& features, int k, int iters) {
    const int64_t T = features.rows(), D = features.cols();
    if (T < k) throw ShapeError("pca: need at least " + std::to_string(k) +
                                " rows, got " + std::to_string(T));
    // mean-center
    std::vector<double> mean(D, 0.0);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d) mean[d] += features.data()[t * D + d];
    for (double& m : mean) m /= static_cast<double>(T);
    std::vector<double> X(T * D);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t d = 0; d < D; ++d)
            X[t * D + d] = features.data()[t * D + d] - mean[d];
    // covariance
    std::vector<double> C(D * D, 0.0);
    for (int64_t t = 0; t < T; ++t)
        for (int64_t i = 0; i < D; ++i) {
            double xi = X[t * D + i];
            if (xi == 0.0) continue;
            for (int64_t j = 0; j < D; ++j) C[i * D + j] += xi * X[t * D + j];
        }
    for (double& c : C) c /= static_cast<double>(T);

    PcaResult r;
    r.components = Tensor::zeros({k, D});
    r.projected = Tensor::zeros({T, k});
    r.eigenvalues.assign(k, 0.0);
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double tol = 1e-12;
    for (int c = 0; c < k; ++c) {
        std::vector<double> v(D), cv(D);
        for (double& x : v) x = gauss(rng);
        double lambda = 0.0;
        for (int it = 0; it < iters; ++it) {
            for (int64_t i = 0; i < D; ++i) {
                double acc = 0.0;
                for (int64_t j = 0; j < D; ++j) acc += C[i * D + j] * v[j];
                cv[i] = acc;
            }
            double norm = 0.0;
            for (double x : cv) norm += x * x;
            norm = std::sqrt(norm);
            if (norm < tol) {
                lambda = 0.0;
                break;
            }
            for (int64_t i = 0; i < D; ++i) v[i] = cv[i] / norm;
            lambda = norm;
        }
        if (lambda < 1e-10) {
            std::cerr << "pca: feature rank < " << k << ", zero-padding component "
                      << c << "\n";
            break;
        }
        r.eigenvalues[c] = lambda;
        for (int64_t d = 0; d < D; ++d) r.components.data()[c * D + d] = v[d];
        for (int64_t t = 0; t < T; ++t) {
            double p = 0.0;
            for (int64_t d = 0; d < D; ++d) p += X[t * D + d] * v[d];
            r.projected.data()[t * k + c] = p;
        }
        // deflate
        for (int64_t i = 0; i < D; ++i)
            for (int64_t j = 0; j < D; ++j) C[i * D + j] -= lambda * v[i] * v[j];
        r.rank = c + 1;
    }
    return r;
}

std::vector<unsigned char> pca_rgb(const Tensor& features) {
    PcaResult r = pca_components(features, 3);
    const int64_t T = features.rows();
    std::vector<unsigned char> rgb(T * 3, 0);
    for (int c = 0; c < 3; ++c) {
        if (c >= r.rank) continue;  // padded channel stays zero
        double lo = r.projected.data()[c], hi = lo;
        for (int64_t t = 0; t < T; ++t) {
            double v = r.projected.data()[t * 3 + c];
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        double span = hi - lo;
        for (int64_t t = 0; t < T; ++t) {
            double v = span > 0 ? (r.projected.data()[t * 3 + c] - lo) / span : 0.0;
            rgb[t * 3 + c] = static_cast<unsigned char>(std::lround(255.0 * v));
        }
    }
    return rgb;
}

void write_pca_ppm(const std::string& path, const TokenSequence& features) {
    if (features.hp * features.wp != features.tokens.rows())
        throw ShapeError("write_pca_ppm: grid does not match token count");
    std::vector<unsigned char> rgb = pca_rgb(features.tokens);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open " + path);
    f << "P6\n" << features.wp << " " << features.hp << "\n255\n";
    f.write(reinterpret_cast<const char*>(rgb.data()),
            static_cast<std::streamsize>(rgb.size()));
}

}  // namespace mf
