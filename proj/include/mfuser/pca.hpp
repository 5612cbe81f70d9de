#pragma once

// PCA feature visualization: the first three principal components of the
// token features (power iteration with deflation) become the RGB channels
// of a patch-grid image.

#include <string>
#include <vector>

#include "mfuser/mvfuser.hpp"

namespace mf {

struct PcaResult {
    Tensor components;               // [k x D], unit rows, ordered by eigenvalue
    std::vector<double> eigenvalues; // non-increasing
    Tensor projected;                // [T x k], mean-centered projections
    int rank = 0;                    // usable components; rest are zero-padded
};

// k principal components of the [T x D] feature rows; T >= k required.
PcaResult pca_components(const Tensor& features, int k = 3, int iters = 500);

// Min-max normalized per channel to [0, 255], row-major grid, 3 bytes/token.
std::vector<unsigned char> pca_rgb(const Tensor& features);

void write_pca_ppm(const std::string& path, const TokenSequence& features);

}  // namespace mf
