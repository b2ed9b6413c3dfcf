#pragma once

#include <cstdint>
#include <vector>

#include "lorablend/errors.hpp"

namespace lorablend {

// Dense row-major matrix of token features (S x C and friends).
struct FeatureMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> data;  // rows * cols, row-major

    FeatureMatrix() = default;
    FeatureMatrix(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, 0.0) {}

    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }

    bool same_shape(const FeatureMatrix& o) const { return rows == o.rows && cols == o.cols; }

    static FeatureMatrix identity(int n);
};

// H x W scalar field over the latent grid. Cell (y, x) <-> token y*W + x.
struct Grid2D {
    int height = 0;
    int width  = 0;
    std::vector<double> data;  // row-major

    Grid2D() = default;
    Grid2D(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0.0) {}

    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    int cells() const { return height * width; }
};

// Normalized isotropic Gaussian sampled on a k x k integer lattice.
struct GaussianKernel {
    int size     = 0;
    double sigma = 0.0;
    std::vector<double> weights;  // size * size, row-major, sums to 1

    double at(int y, int x) const { return weights[static_cast<std::size_t>(y) * size + x]; }
};

// H x W field in {0,1}; one subject's spatial claim.
struct BinaryPrior {
    int height  = 0;
    int width   = 0;
    int subject = -1;
    std::vector<std::uint8_t> data;  // row-major, 0 or 1

    BinaryPrior() = default;
    BinaryPrior(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w, 0) {}

    std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

    int cells() const { return height * width; }
};

struct Labeling {
    int height = 0;
    int width  = 0;
    std::vector<int> labels;  // 0 = background, 1..count = components
    int count  = 0;
};

// --- kernels -------------------------------------------------------------
// All functions are pure, single-threaded, and sum in a fixed left-to-right
// order, so identical input bits give identical output bits.

// a (m x k) * b (k x n). ShapeError on inner-dimension mismatch.
FeatureMatrix matmul(const FeatureMatrix& a, const FeatureMatrix& b);

// a (m x k) * b^T where b is (n x k). Same summation order as matmul.
FeatureMatrix matmul_nt(const FeatureMatrix& a, const FeatureMatrix& b);

// Row-wise softmax with max subtraction.
FeatureMatrix row_softmax(const FeatureMatrix& m);

// k odd and >= 1, sigma > 0; weights normalized to sum 1.
GaussianKernel gaussian_kernel(int k, double sigma);

// Same-size 2-D convolution with replicate padding at the borders.
// ParamError when the kernel does not fit inside the grid.
Grid2D conv2d_same(const Grid2D& g, const GaussianKernel& kern);

// (g - min) / (max - min); a constant field maps to all-zeros.
Grid2D renorm(const Grid2D& g);

// Nearest-rank quantile on the sorted cell values: v = sorted[max(1, ceil(q*n)) - 1].
double quantile(const Grid2D& g, double q);

// Components of the foreground under 4- or 8-connectivity. Labels are
// assigned in row-major discovery order starting from 1.
Labeling connected_components(const BinaryPrior& b, int connectivity);

// Grayscale morphological reconstruction by dilation: iterate
// r <- min(dilate_3x3(r), mask) from r = marker until fixpoint.
// The structuring element is the full 3x3 square (8-connectivity).
// Requires marker <= mask elementwise.
Grid2D morph_reconstruct(const Grid2D& marker, const Grid2D& mask);

// --- small helpers shared across modules ---------------------------------

void add_inplace(FeatureMatrix& dst, const FeatureMatrix& src);
FeatureMatrix add(const FeatureMatrix& a, const FeatureMatrix& b);
FeatureMatrix sub(const FeatureMatrix& a, const FeatureMatrix& b);
FeatureMatrix scale(const FeatureMatrix& a, double s);

// Throws Error if any value is non-finite; `what` names the producer.
void ensure_finite(const std::vector<double>& data, const char* what);

}  // namespace lorablend
