#include "lorablend/oracles.hpp"

#include <algorithm>
#include <cmath>

namespace lorablend::oracles {

FeatureMatrix matmul_ref(const FeatureMatrix& a, const FeatureMatrix& b) {
    FeatureMatrix out(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        for (int j = 0; j < b.cols; ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols; ++k) {
                s += a.data[static_cast<std::size_t>(i) * a.cols + k] *
                     b.data[static_cast<std::size_t>(k) * b.cols + j];
            }
            out.data[static_cast<std::size_t>(i) * b.cols + j] = s;
        }
    }
    return out;
}

FeatureMatrix softmax_ref(const FeatureMatrix& m) {
    FeatureMatrix out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i) {
        double denom = 0.0;
        for (int j = 0; j < m.cols; ++j) {
            denom += std::exp(m.at(i, j));
        }
        for (int j = 0; j < m.cols; ++j) {
            out.at(i, j) = std::exp(m.at(i, j)) / denom;
        }
    }
    return out;
}

std::vector<double> gaussian_ref(int k, double sigma) {
    std::vector<double> w(static_cast<std::size_t>(k) * k);
    const int half = k / 2;
    double sum     = 0.0;
    for (int y = 0; y < k; ++y) {
        for (int x = 0; x < k; ++x) {
            const double dy = y - half;
            const double dx = x - half;
            w[static_cast<std::size_t>(y) * k + x] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            sum += w[static_cast<std::size_t>(y) * k + x];
        }
    }
    for (double& v : w) {
        v /= sum;
    }
    return w;
}

Grid2D conv2d_ref(const Grid2D& g, const GaussianKernel& kern) {
    Grid2D out(g.height, g.width);
    const int half = kern.size / 2;
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            double s = 0.0;
            for (int ky = -half; ky <= half; ++ky) {
                for (int kx = -half; kx <= half; ++kx) {
                    int sy = y + ky;
                    int sx = x + kx;
                    sy     = sy < 0 ? 0 : (sy >= g.height ? g.height - 1 : sy);
                    sx     = sx < 0 ? 0 : (sx >= g.width ? g.width - 1 : sx);
                    s += kern.at(ky + half, kx + half) * g.at(sy, sx);
                }
            }
            out.at(y, x) = s;
        }
    }
    return out;
}

double quantile_ref(const Grid2D& g, double q) {
    std::vector<double> sorted(g.data);
    std::sort(sorted.begin(), sorted.end());
    double rank = std::ceil(q * static_cast<double>(sorted.size()));
    if (rank < 1.0) {
        rank = 1.0;
    }
    return sorted[static_cast<std::size_t>(rank) - 1];
}

namespace {

void flood_visit(std::vector<std::uint8_t>& grid, int h, int w, int y, int x, int connectivity) {
    grid[static_cast<std::size_t>(y) * w + x] = 0;
    for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
            if (dy == 0 && dx == 0) {
                continue;
            }
            if (connectivity == 4 && dy != 0 && dx != 0) {
                continue;
            }
            const int ny = y + dy;
            const int nx = x + dx;
            if (ny < 0 || ny >= h || nx < 0 || nx >= w) {
                continue;
            }
            if (grid[static_cast<std::size_t>(ny) * w + nx]) {
                flood_visit(grid, h, w, ny, nx, connectivity);
            }
        }
    }
}

}  // namespace

int flood_fill_count(const BinaryPrior& b, int connectivity) {
    std::vector<std::uint8_t> grid(b.data);
    int count = 0;
    for (int y = 0; y < b.height; ++y) {
        for (int x = 0; x < b.width; ++x) {
            if (grid[static_cast<std::size_t>(y) * b.width + x]) {
                ++count;
                flood_visit(grid, b.height, b.width, y, x, connectivity);
            }
        }
    }
    return count;
}

Grid2D reconstruct_ref(const Grid2D& marker, const Grid2D& mask) {
    Grid2D cur = marker;
    for (;;) {
        Grid2D next(cur.height, cur.width);
        for (int y = 0; y < cur.height; ++y) {
            for (int x = 0; x < cur.width; ++x) {
                double m = cur.at(y, x);
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int ny = y + dy;
                        const int nx = x + dx;
                        if (ny < 0 || ny >= cur.height || nx < 0 || nx >= cur.width) {
                            continue;
                        }
                        m = std::max(m, cur.at(ny, nx));
                    }
                }
                next.at(y, x) = std::min(m, mask.at(y, x));
            }
        }
        if (next.data == cur.data) {
            return cur;
        }
        cur = std::move(next);
    }
}

std::vector<double> singular_values(const FeatureMatrix& m) {
    // One-sided Jacobi on columns; adequate and exact enough at toy sizes.
    const bool wide = m.cols > m.rows;
    const int rows  = wide ? m.cols : m.rows;
    const int cols  = wide ? m.rows : m.cols;
    std::vector<double> a(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            a[static_cast<std::size_t>(r) * cols + c] = wide ? m.at(c, r) : m.at(r, c);
        }
    }
    auto col_dot = [&](int i, int j) {
        double s = 0.0;
        for (int r = 0; r < rows; ++r) {
            s += a[static_cast<std::size_t>(r) * cols + i] * a[static_cast<std::size_t>(r) * cols + j];
        }
        return s;
    };
    const int max_sweeps = 60;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < cols - 1; ++i) {
            for (int j = i + 1; j < cols; ++j) {
                const double aii = col_dot(i, i);
                const double ajj = col_dot(j, j);
                const double aij = col_dot(i, j);
                if (std::abs(aij) <= 1e-30) {
                    continue;
                }
                off += std::abs(aij);
                const double tau = (ajj - aii) / (2.0 * aij);
                const double t   = (tau >= 0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
                const double cs  = 1.0 / std::sqrt(1.0 + t * t);
                const double sn  = cs * t;
                for (int r = 0; r < rows; ++r) {
                    double& ai = a[static_cast<std::size_t>(r) * cols + i];
                    double& aj = a[static_cast<std::size_t>(r) * cols + j];
                    const double vi = ai;
                    ai = cs * vi - sn * aj;
                    aj = sn * vi + cs * aj;
                }
            }
        }
        if (off < 1e-15) {
            break;
        }
    }
    std::vector<double> sv(cols);
    for (int c = 0; c < cols; ++c) {
        sv[c] = std::sqrt(col_dot(c, c));
    }
    std::sort(sv.begin(), sv.end(), std::greater<double>());
    return sv;
}

int numerical_rank(const FeatureMatrix& m, double tol) {
    const std::vector<double> sv = singular_values(m);
    int rank = 0;
    for (const double s : sv) {
        if (s > tol) {
            ++rank;
        }
    }
    return rank;
}

FeatureMatrix blend_ref(const FeatureMatrix& base, const std::vector<FeatureMatrix>& adapters,
                        const std::vector<std::vector<std::uint8_t>>& priors, int prompt_rows,
                        double eps) {
    const int total = base.rows;
    const int n     = static_cast<int>(adapters.size());
    FeatureMatrix out(total, base.cols);
    for (int p = 0; p < total; ++p) {
        if (p < prompt_rows) {  // prompt token: no blending
            for (int c = 0; c < base.cols; ++c) {
                out.at(p, c) = base.at(p, c);
            }
            continue;
        }
        const int cell = p - prompt_rows;
        int claims     = 0;
        for (int k = 0; k < n; ++k) {
            claims += priors[static_cast<std::size_t>(k)][static_cast<std::size_t>(cell)];
        }
        if (claims == 0) {  // background token
            for (int c = 0; c < base.cols; ++c) {
                out.at(p, c) = base.at(p, c);
            }
            continue;
        }
        const double denom = static_cast<double>(claims) + eps;
        for (int c = 0; c < base.cols; ++c) {
            double s = 0.0;
            for (int k = 0; k < n; ++k) {
                const double alpha =
                    static_cast<double>(priors[static_cast<std::size_t>(k)][static_cast<std::size_t>(cell)]) / denom;
                s += alpha * adapters[static_cast<std::size_t>(k)].at(p, c);
            }
            out.at(p, c) = s;
        }
    }
    return out;
}

std::vector<int> argmax_winners_ref(const std::vector<Grid2D>& maps) {
    const int cells = maps[0].cells();
    std::vector<int> winners(static_cast<std::size_t>(cells), 0);
    for (int i = 0; i < cells; ++i) {
        int best      = 0;
        double bestv  = maps[0].data[static_cast<std::size_t>(i)];
        for (std::size_t u = 1; u < maps.size(); ++u) {
            const double v = maps[u].data[static_cast<std::size_t>(i)];
            if (v > bestv) {
                bestv = v;
                best  = static_cast<int>(u);
            }
        }
        winners[static_cast<std::size_t>(i)] = best;
    }
    return winners;
}

}  // namespace lorablend::oracles
