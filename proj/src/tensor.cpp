#include "lorablend/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace lorablend {

FeatureMatrix FeatureMatrix::identity(int n) {
    FeatureMatrix m(n, n);
    for (int i = 0; i < n; ++i) {
        m.at(i, i) = 1.0;
    }
    return m;
}

void ensure_finite(const std::vector<double>& data, const char* what) {
    for (const double v : data) {
        if (!std::isfinite(v)) {
            throw Error(std::string(what) + ": non-finite value produced");
        }
    }
}

FeatureMatrix matmul(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
    }
    FeatureMatrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(k, j);
            }
            out.at(i, j) = acc;
        }
    }
    ensure_finite(out.data, "matmul");
    return out;
}

FeatureMatrix matmul_nt(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (a.cols != b.cols) {
        throw ShapeError("matmul_nt: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                         " * (" + std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")^T");
    }
    FeatureMatrix out(a.rows, b.rows);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.rows; ++j) {
            double acc = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                acc += a.at(i, k) * b.at(j, k);
            }
            out.at(i, j) = acc;
        }
    }
    ensure_finite(out.data, "matmul_nt");
    return out;
}

FeatureMatrix row_softmax(const FeatureMatrix& m) {
    FeatureMatrix out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        double mx = m.at(i, 0);
        for (int j = 1; j < m.cols; ++j) {
            mx = std::max(mx, m.at(i, j));
        }
        double sum = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            const double e = std::exp(m.at(i, j) - mx);
            out.at(i, j)   = e;
            sum += e;
        }
        for (int j = 0; j < m.cols; ++j) {
            out.at(i, j) /= sum;
        }
    }
    ensure_finite(out.data, "row_softmax");
    return out;
}

GaussianKernel gaussian_kernel(int k, double sigma) {
    if (k < 1 || k % 2 == 0) {
        throw ParamError("gaussian_kernel: size must be odd and >= 1, got " + std::to_string(k));
    }
    if (!(sigma > 0.0)) {
        throw ParamError("gaussian_kernel: sigma must be > 0, got " + std::to_string(sigma));
    }
    GaussianKernel kern;
    kern.size  = k;
    kern.sigma = sigma;
    kern.weights.resize(static_cast<std::size_t>(k) * k);
    const int half = k / 2;
    double sum     = 0.0;
    for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
            const double dy = y - half;
            const double dx = x - half;
            const double w  = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            kern.weights[static_cast<std::size_t>(y) * k + x] = w;
            sum += w;
        }
    }
    for (double& w : kern.weights) {
        w /= sum;
    }
    return kern;
}

Grid2D conv2d_same(const Grid2D& g, const GaussianKernel& kern) {
    if (kern.size > g.height || kern.size > g.width) {
        throw ParamError("conv2d_same: kernel size " + std::to_string(kern.size) +
                         " exceeds grid " + std::to_string(g.height) + "x" + std::to_string(g.width));
    }
    Grid2D out(g.height, g.width);
    const int half = kern.size / 2;
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            double acc = 0.0;
            for (int ky = 0; ky < kern.size; ++ky) {
                for (int kx = 0; kx < kern.size; ++kx) {
                    const int sy = std::clamp(y + ky - half, 0, g.height - 1);
                    const int sx = std::clamp(x + kx - half, 0, g.width - 1);
                    acc += kern.at(ky, kx) * g.at(sy, sx);
                }
            }
            out.at(y, x) = acc;
        }
    }
    ensure_finite(out.data, "conv2d_same");
    return out;
}

Grid2D renorm(const Grid2D& g) {
    Grid2D out(g.height, g.width);
    if (g.data.empty()) {
        return out;
    }
    ensure_finite(g.data, "renorm input");
    double lo = g.data[0];
    double hi = g.data[0];
    for (const double v : g.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {
        return out;  // constant field carries no signal
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < g.data.size(); ++i) {
        out.data[i] = (g.data[i] - lo) / range;
    }
    return out;
}

double quantile(const Grid2D& g, double q) {
    if (g.data.empty()) {
        throw ParamError("quantile: empty grid");
    }
    if (!(q >= 0.0 && q <= 1.0)) {
        throw ParamError("quantile: q must be in [0,1], got " + std::to_string(q));
    }
    ensure_finite(g.data, "quantile input");
    std::vector<double> sorted(g.data);
    std::sort(sorted.begin(), sorted.end());
    const auto n   = static_cast<double>(sorted.size());
    const int rank = std::max(1, static_cast<int>(std::ceil(q * n)));
    return sorted[static_cast<std::size_t>(rank) - 1];
}

Labeling connected_components(const BinaryPrior& b, int connectivity) {
    if (connectivity != 4 && connectivity != 8) {
        throw ParamError("connected_components: connectivity must be 4 or 8");
    }
    Labeling lab;
    lab.height = b.height;
    lab.width  = b.width;
    lab.labels.assign(b.data.size(), 0);

    static const int dy8[] = {-1, -1, -1, 0, 0, 1, 1, 1};
    static const int dx8[] = {-1, 0, 1, -1, 1, -1, 0, 1};
    static const int dy4[] = {-1, 0, 0, 1};
    static const int dx4[] = {0, -1, 1, 0};
    const int* dy   = connectivity == 8 ? dy8 : dy4;
    const int* dx   = connectivity == 8 ? dx8 : dx4;
    const int nbrs  = connectivity;

    std::vector<int> stack;
    for (int y = 0; y < b.height; ++y) {
        for (int x = 0; x < b.width; ++x) {
            const int idx = y * b.width + x;
            if (b.data[idx] == 0 || lab.labels[idx] != 0) {
                continue;
            }
            ++lab.count;
            lab.labels[idx] = lab.count;
            stack.push_back(idx);
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                const int cy = cur / b.width;
                const int cx = cur % b.width;
                for (int k = 0; k < nbrs; ++k) {
                    const int ny = cy + dy[k];
                    const int nx = cx + dx[k];
                    if (ny < 0 || ny >= b.height || nx < 0 || nx >= b.width) {
                        continue;
                    }
                    const int nidx = ny * b.width + nx;
                    if (b.data[nidx] != 0 && lab.labels[nidx] == 0) {
                        lab.labels[nidx] = lab.count;
                        stack.push_back(nidx);
                    }
                }
            }
        }
    }
    return lab;
}

namespace {

Grid2D dilate3x3(const Grid2D& g) {
    Grid2D out(g.height, g.width);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            double mx = g.at(y, x);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = y + dy;
                    const int nx = x + dx;
                    if (ny < 0 || ny >= g.height || nx < 0 || nx >= g.width) {
                        continue;
                    }
                    mx = std::max(mx, g.at(ny, nx));
                }
            }
            out.at(y, x) = mx;
        }
    }
    return out;
}

}  // namespace

Grid2D morph_reconstruct(const Grid2D& marker, const Grid2D& mask) {
    if (marker.height != mask.height || marker.width != mask.width) {
        throw ShapeError("morph_reconstruct: marker and mask shapes differ");
    }
    for (std::size_t i = 0; i < marker.data.size(); ++i) {
        if (marker.data[i] > mask.data[i]) {
            throw ParamError("morph_reconstruct: marker exceeds mask at cell " + std::to_string(i));
        }
    }
    Grid2D cur = marker;
    for (;;) {
        Grid2D next = dilate3x3(cur);
        for (std::size_t i = 0; i < next.data.size(); ++i) {
            next.data[i] = std::min(next.data[i], mask.data[i]);
        }
        if (next.data == cur.data) {
            return cur;
        }
        cur = std::move(next);
    }
}

void add_inplace(FeatureMatrix& dst, const FeatureMatrix& src) {
    if (!dst.same_shape(src)) {
        throw ShapeError("add_inplace: shape mismatch");
    }
    for (std::size_t i = 0; i < dst.data.size(); ++i) {
        dst.data[i] += src.data[i];
    }
}

FeatureMatrix add(const FeatureMatrix& a, const FeatureMatrix& b) {
    FeatureMatrix out = a;
    add_inplace(out, b);
    return out;
}

FeatureMatrix sub(const FeatureMatrix& a, const FeatureMatrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("sub: shape mismatch");
    }
    FeatureMatrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        out.data[i] = a.data[i] - b.data[i];
    }
    return out;
}

FeatureMatrix scale(const FeatureMatrix& a, double s) {
    FeatureMatrix out(a.rows, a.cols);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        out.data[i] = a.data[i] * s;
    }
    return out;
}

}  // namespace lorablend
