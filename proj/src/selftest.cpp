#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "lorablend/adapter.hpp"
#include "lorablend/blend.hpp"
#include "lorablend/oracles.hpp"
#include "lorablend/pipeline.hpp"
#include "lorablend/prior.hpp"
#include "lorablend/rng.hpp"

namespace lorablend {

namespace {

struct SuiteResult {
    int cases = 0;
    bool ok   = true;
    std::string detail;  // named invariant that failed

    void fail(const std::string& what) {
        if (ok) {
            detail = what;
        }
        ok = false;
    }
};

FeatureMatrix rand_mat(int r, int c, SeededRng& rng) {
    FeatureMatrix m(r, c);
    for (double& v : m.data) {
        v = rng.normal();
    }
    return m;
}

Grid2D rand_grid(int h, int w, SeededRng& rng) {
    Grid2D g(h, w);
    for (double& v : g.data) {
        v = rng.uniform();
    }
    return g;
}

BinaryPrior rand_prior(int h, int w, double fill, SeededRng& rng) {
    BinaryPrior b(h, w);
    for (auto& v : b.data) {
        v = rng.uniform() < fill ? 1 : 0;
    }
    return b;
}

SuiteResult suite_matmul(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1001);
    for (int trial = 0; trial < 30; ++trial) {
        const int m = 1 + static_cast<int>(rng.uniform() * 8);
        const int k = 1 + static_cast<int>(rng.uniform() * 8);
        const int n = 1 + static_cast<int>(rng.uniform() * 8);
        const FeatureMatrix a = rand_mat(m, k, rng);
        const FeatureMatrix b = rand_mat(k, n, rng);
        FeatureMatrix got     = matmul(a, b);
        if (corrupt) {
            got.data[0] += 1e-6;
        }
        const FeatureMatrix ref = oracles::matmul_ref(a, b);
        ++res.cases;
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            if (std::abs(got.data[i] - ref.data[i]) > 1e-12) {
                res.fail("scalar triple-loop mismatch beyond 1e-12");
            }
        }
    }
    return res;
}

SuiteResult suite_softmax(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1002);
    for (int trial = 0; trial < 30; ++trial) {
        const FeatureMatrix m = rand_mat(4, 6, rng);
        FeatureMatrix got     = row_softmax(m);
        if (corrupt) {
            got.data[0] += 1e-6;
        }
        const FeatureMatrix ref = oracles::softmax_ref(m);
        ++res.cases;
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            if (std::abs(got.data[i] - ref.data[i]) > 1e-9) {
                res.fail("naive exp/sum mismatch beyond 1e-9");
            }
        }
        for (int r = 0; r < got.rows; ++r) {
            double sum = 0.0;
            for (int c = 0; c < got.cols; ++c) {
                sum += got.at(r, c);
            }
            if (std::abs(sum - 1.0) > 1e-6) {
                res.fail("row sum deviates from 1 beyond 1e-6");
            }
        }
    }
    return res;
}

SuiteResult suite_gaussian(bool corrupt) {
    SuiteResult res;
    for (const int k : {1, 3, 5, 7}) {
        for (const double sigma : {0.5, 1.0, 2.0}) {
            GaussianKernel kern = gaussian_kernel(k, sigma);
            if (corrupt) {
                kern.weights[0] += 1e-3;
            }
            const std::vector<double> ref = oracles::gaussian_ref(k, sigma);
            ++res.cases;
            double sum = 0.0;
            for (std::size_t i = 0; i < kern.weights.size(); ++i) {
                if (std::abs(kern.weights[i] - ref[i]) > 1e-12) {
                    res.fail("closed-form evaluation mismatch beyond 1e-12");
                }
                sum += kern.weights[i];
            }
            if (std::abs(sum - 1.0) > 1e-9) {
                res.fail("kernel weights do not sum to 1 within 1e-9");
            }
            for (int y = 0; y < k; ++y) {
                for (int x = 0; x < k; ++x) {
                    if (kern.at(y, x) != kern.at(k - 1 - y, x) || kern.at(y, x) != kern.at(y, k - 1 - x) ||
                        kern.at(y, x) != kern.at(x, y)) {
                        res.fail("kernel not symmetric under flips");
                    }
                }
            }
        }
    }
    return res;
}

SuiteResult suite_conv2d(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1003);
    for (int trial = 0; trial < 25; ++trial) {
        const int h = 5 + static_cast<int>(rng.uniform() * 8);
        const int w = 5 + static_cast<int>(rng.uniform() * 8);
        const int k = 1 + 2 * static_cast<int>(rng.uniform() * 3);
        const Grid2D g         = rand_grid(h, w, rng);
        const GaussianKernel kk = gaussian_kernel(k, 0.5 + rng.uniform());
        Grid2D got             = conv2d_same(g, kk);
        if (corrupt) {
            got.data[0] += 1e-6;
        }
        const Grid2D ref = oracles::conv2d_ref(g, kk);
        ++res.cases;
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            if (std::abs(got.data[i] - ref.data[i]) > 1e-12) {
                res.fail("sliding-window mismatch beyond 1e-12");
            }
        }
    }
    return res;
}

SuiteResult suite_quantile(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1004);
    for (int trial = 0; trial < 30; ++trial) {
        const Grid2D g = rand_grid(6, 7, rng);
        for (const double q : {0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0}) {
            double got = quantile(g, q);
            if (corrupt) {
                got += 1e-9;
            }
            ++res.cases;
            if (got != oracles::quantile_ref(g, q)) {
                res.fail("nearest-rank value differs from full-sort oracle");
            }
        }
    }
    return res;
}

SuiteResult suite_flood_fill(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1005);
    for (int trial = 0; trial < 40; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform() * 15);
        const int w = 2 + static_cast<int>(rng.uniform() * 15);
        const BinaryPrior b = rand_prior(h, w, 0.45, rng);
        for (const int conn : {4, 8}) {
            int got = connected_components(b, conn).count;
            if (corrupt) {
                ++got;
            }
            ++res.cases;
            if (got != oracles::flood_fill_count(b, conn)) {
                res.fail("component count differs from recursive flood fill");
            }
        }
    }
    return res;
}

SuiteResult suite_reconstruct(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1006);
    for (int trial = 0; trial < 20; ++trial) {
        const Grid2D mask = rand_grid(8, 8, rng);
        Grid2D marker(8, 8);
        for (std::size_t i = 0; i < mask.data.size(); ++i) {
            marker.data[i] = rng.uniform() < 0.15 ? mask.data[i] : 0.0;
        }
        Grid2D got = morph_reconstruct(marker, mask);
        if (corrupt) {
            got.data[0] += 1e-6;
        }
        ++res.cases;
        const Grid2D ref = oracles::reconstruct_ref(marker, mask);
        if (got.data != ref.data) {
            res.fail("result differs from fixpoint iteration oracle");
        }
        for (std::size_t i = 0; i < got.data.size(); ++i) {
            if (got.data[i] < marker.data[i] || got.data[i] > mask.data[i]) {
                res.fail("marker <= result <= mask violated");
            }
        }
        const Grid2D again = oracles::reconstruct_ref(got, mask);
        if (again.data != got.data) {
            res.fail("result is not a fixpoint of min(dilate(r), mask)");
        }
    }
    return res;
}

SuiteResult suite_blend(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1007);
    BlendConfig cfg;
    for (int trial = 0; trial < 30; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform() * 7);
        const int w = 2 + static_cast<int>(rng.uniform() * 7);
        const int c = 1 + static_cast<int>(rng.uniform() * 16);
        const int n = 1 + static_cast<int>(rng.uniform() * 4);
        const int s = h * w;
        std::vector<BinaryPrior> priors;
        std::vector<std::vector<std::uint8_t>> flat;
        for (int k = 0; k < n; ++k) {
            priors.push_back(rand_prior(h, w, rng.uniform(), rng));
            flat.emplace_back(priors.back().data.begin(), priors.back().data.end());
        }
        const BlendWeights weights = alpha_weights(priors, cfg.epsilon);
        ResidualRecord base;
        base.block    = 0;
        base.sublayer = 1;
        base.stream   = Stream::Image;
        base.values   = rand_mat(s, c, rng);
        std::vector<ResidualRecord> adapters;
        std::vector<FeatureMatrix> adapter_vals;
        for (int k = 0; k < n; ++k) {
            ResidualRecord r = base;
            r.values         = rand_mat(s, c, rng);
            adapter_vals.push_back(r.values);
            adapters.push_back(std::move(r));
        }
        ResidualRecord got = blend_residual(base, adapters, weights, cfg);
        if (corrupt) {
            got.values.data[0] += 1e-9;
        }
        ++res.cases;
        const FeatureMatrix ref = oracles::blend_ref(base.values, adapter_vals, flat, 0, cfg.epsilon);
        if (got.values.data != ref.data) {
            res.fail("blend differs from the scalar loop (0 ulp required)");
        }
    }
    return res;
}

SuiteResult suite_svd_rank(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1008);
    for (int trial = 0; trial < 25; ++trial) {
        const int out_dim = 4 + static_cast<int>(rng.uniform() * 9);
        const int in_dim  = 4 + static_cast<int>(rng.uniform() * 9);
        const int r       = 1 + static_cast<int>(rng.uniform() * 3);
        const FeatureMatrix w0 = rand_mat(out_dim, in_dim, rng);
        LoRADelta d;
        d.target = "t";
        d.rank   = r;
        d.a      = rand_mat(r, in_dim, rng);
        d.b      = rand_mat(out_dim, r, rng);
        d.scale  = 0.5 + rng.uniform();
        FeatureMatrix delta = sub(merge_weights(w0, d), w0);
        if (corrupt) {
            // add a full-rank perturbation well above the tolerance
            for (std::size_t i = 0; i < delta.data.size(); ++i) {
                delta.data[i] += (i % 2 ? 1e-6 : -1e-6) * (1.0 + static_cast<double>(i % 7));
            }
        }
        ++res.cases;
        if (oracles::numerical_rank(delta, 1e-8) > r) {
            res.fail("merged-weight delta exceeds declared rank at tol 1e-8");
        }
    }
    return res;
}

SuiteResult suite_argmax(bool corrupt) {
    SuiteResult res;
    SeededRng rng(1009);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 1 + static_cast<int>(rng.uniform() * 4);
        std::vector<Grid2D> maps;
        for (int u = 0; u < n; ++u) {
            maps.push_back(rand_grid(6, 6, rng));
        }
        auto priors = argmax_partition(maps);
        if (corrupt && n >= 2) {
            priors[0].data[0] = priors[0].data[0] ? 0 : 1;
        }
        const std::vector<int> winners = oracles::argmax_winners_ref(maps);
        ++res.cases;
        for (int i = 0; i < 36; ++i) {
            int claimed = 0;
            for (int u = 0; u < n; ++u) {
                const int bit = priors[static_cast<std::size_t>(u)].data[static_cast<std::size_t>(i)];
                claimed += bit;
                if (bit != (winners[static_cast<std::size_t>(i)] == u ? 1 : 0)) {
                    res.fail("winner differs from per-cell scalar argmax");
                }
            }
            if (claimed != 1) {
                res.fail("partition not disjoint/covering");
            }
        }
    }
    return res;
}

}  // namespace

int run_selftest(const std::string& mutate, std::ostream& out) {
    struct Suite {
        const char* name;
        std::function<SuiteResult(bool)> run;
    };
    const std::vector<Suite> suites = {
        {"matmul-scalar", suite_matmul},
        {"softmax-scalar", suite_softmax},
        {"gaussian-kernel", suite_gaussian},
        {"conv2d-window", suite_conv2d},
        {"sort-quantile", suite_quantile},
        {"flood-fill", suite_flood_fill},
        {"fixpoint-reconstruct", suite_reconstruct},
        {"blend-scalar", suite_blend},
        {"svd-rank", suite_svd_rank},
        {"argmax-partition", suite_argmax},
    };

    bool known_mutation = mutate.empty();
    for (const auto& s : suites) {
        if (mutate == s.name) {
            known_mutation = true;
        }
    }
    if (!known_mutation) {
        out << "unknown mutation target '" << mutate << "'\n";
        return 2;
    }

    bool all_ok = true;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %6s  %s", "suite", "cases", "status");
    out << line << "\n";
    for (const auto& s : suites) {
        const SuiteResult r = s.run(mutate == s.name);
        all_ok &= r.ok;
        std::snprintf(line, sizeof(line), "%-22s %6d  %s", s.name, r.cases, r.ok ? "PASS" : "FAIL");
        out << line;
        if (!r.ok) {
            out << "  (" << r.detail << ")";
        }
        out << "\n";
    }
    out << (all_ok ? "selftest: all suites passed\n" : "selftest: FAILURES present\n");
    return all_ok ? 0 : 1;
}

}  // namespace lorablend
