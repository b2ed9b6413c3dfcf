#pragma once

#include <vector>

#include "lorablend/tensor.hpp"

namespace lorablend::oracles {

// Reference implementations kept deliberately naive and separate from the
// production kernels. selftest and the test suites compare against these;
// nothing in the pipeline itself may call them.

// Plain per-cell dot product.
FeatureMatrix matmul_ref(const FeatureMatrix& a, const FeatureMatrix& b);

// exp/sum without max subtraction (valid on moderate inputs only).
FeatureMatrix softmax_ref(const FeatureMatrix& m);

// Direct evaluation of exp(-(dx^2+dy^2)/(2 sigma^2)) normalized to sum 1.
std::vector<double> gaussian_ref(int k, double sigma);

// Sliding window with explicit index clamping (replicate padding).
Grid2D conv2d_ref(const Grid2D& g, const GaussianKernel& kern);

// Full sort, nearest-rank pick.
double quantile_ref(const Grid2D& g, double q);

// Component count by depth-first flood fill over a copy of the grid.
int flood_fill_count(const BinaryPrior& b, int connectivity);

// Exact fixpoint iteration of r <- min(dilate(r), mask) from r = marker.
Grid2D reconstruct_ref(const Grid2D& marker, const Grid2D& mask);

// Largest singular value count above tol, via one-sided Jacobi.
std::vector<double> singular_values(const FeatureMatrix& m);
int numerical_rank(const FeatureMatrix& m, double tol);

// Per-token scalar loop of the residual blending algorithm: prompt rows are
// copied from base, unclaimed image rows are copied from base, claimed rows
// get sum_k alpha_k * adapter_k with alpha_k = prior_k / (claims + eps).
// `priors` are flattened row-major, one per subject; `prompt_rows` leading
// rows of the records are prompt tokens.
FeatureMatrix blend_ref(const FeatureMatrix& base, const std::vector<FeatureMatrix>& adapters,
                        const std::vector<std::vector<std::uint8_t>>& priors, int prompt_rows,
                        double eps);

// Per-cell argmax with lowest-index tie break.
std::vector<int> argmax_winners_ref(const std::vector<Grid2D>& maps);

}  // namespace lorablend::oracles
