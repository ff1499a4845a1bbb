#pragma once

#include "physctl/tensor.hpp"

namespace physctl {

struct PcaResult {
  Tensor embedding;          // [N x 2]
  double variance[2] = {0.0, 0.0};  // per-component variance
  double total_variance = 0.0;      // trace of the covariance
  std::size_t components = 0;       // non-degenerate components found (0..2)
};

// Mean-centred projection onto the top two principal directions, by power
// iteration with deflation (tolerance 1e-8, at most 1000 iterations). The
// sign of each axis is fixed so that its largest-magnitude loading is
// positive. Rank < 2 pads with zero columns and logs a warning.
PcaResult pca2d(const Tensor& points);
inline Tensor pca2d_embed(const Tensor& points) { return pca2d(points).embedding; }

}  // namespace physctl
