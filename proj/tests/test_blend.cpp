#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "lorablend/blend.hpp"
#include "lorablend/oracles.hpp"
#include "test_util.hpp"

using namespace lorablend;
using namespace lorablend::testutil;

namespace {

// Epsilon below the rounding threshold of double at 1.0: 1 + kTinyEps == 1.0
// exactly, so one-hot tokens get weight exactly 1 through the literal
// weight formula. Used by the bitwise zero-delta equivalence tests.
constexpr double kTinyEps = 1e-18;

BinaryPrior full_prior(int h, int w) {
    BinaryPrior p(h, w);
    std::fill(p.data.begin(), p.data.end(), std::uint8_t{1});
    return p;
}

BinaryPrior random_prior(int h, int w, double fill, SeededRng& rng) {
    BinaryPrior p(h, w);
    for (auto& v : p.data) {
        v = rng.uniform() < fill ? 1 : 0;
    }
    return p;
}

ResidualRecord make_record(int block, int sub, Stream stream, int rows, int cols, SeededRng& rng) {
    ResidualRecord r;
    r.block    = block;
    r.sublayer = sub;
    r.stream   = stream;
    r.values   = random_matrix(rows, cols, rng);
    return r;
}

std::vector<std::string> image_targets() {
    return {"blocks.double.0.image.attn.wq", "blocks.double.1.image.mlp.w1",
            "blocks.single.0.attn.wv"};
}

// Replays a blended denoising run record by record from scratch: its own
// latent, its own streams, sublayer_eval for every model, and the scalar
// blend oracle for the expected values. Any bit mismatch is recorded.
struct ReplayHarness {
    const Model& base;
    std::vector<const Model*> adapters;
    std::vector<std::vector<std::uint8_t>> priors_flat;
    double eps;
    const FeatureMatrix& prompt;
    double dt;

    FeatureMatrix z;
    FeatureMatrix txt, img;
    int cur_step = -1;
    SublayerOut base_out;
    std::vector<SublayerOut> adapter_outs;
    long mismatches  = 0;
    long records_seen = 0;

    ReplayHarness(const Model& base_model, std::vector<const Model*> adapter_models,
                  const std::vector<BinaryPrior>& priors, double epsilon, const FeatureMatrix& prompt_in,
                  int steps, const FeatureMatrix& z1)
        : base(base_model), adapters(std::move(adapter_models)), eps(epsilon), prompt(prompt_in),
          dt(1.0 / steps), z(z1) {
        for (const auto& p : priors) {
            priors_flat.emplace_back(p.data.begin(), p.data.end());
        }
        adapter_outs.resize(adapters.size());
    }

    void begin_step(int step) {
        if (cur_step >= 0) {
            finish_step();  // settle the previous step's Euler update
        }
        // plain steps between blended ones are advanced by finish_step
        while (cur_step + 1 < step) {
            ++cur_step;
            advance_plain();
        }
        cur_step = step;
        TokenState s;
        s.text  = prompt;
        s.image = z;
        s.temb  = base.time_embedding(1.0 - step * dt);
        TokenState prepared = base.embed_inputs(s);
        txt = std::move(prepared.text);
        img = std::move(prepared.image);
    }

    void advance_plain() {
        z = sub(z, scale(base.velocity(z, 1.0 - cur_step * dt, prompt), dt));
    }

    void finish_step() {
        z = sub(z, scale(base.velocity_head(img), dt));
    }

    void on_record(int step, const ResidualRecord& prod_base, const FeatureMatrix& prod_blended) {
        if (step != cur_step) {
            begin_step(step);
        }
        ++records_seen;
        if (prod_base.stream == Stream::Text) {
            // evaluate this sublayer on my own streams for every model
            base_out = base.sublayer_eval(prod_base.block, prod_base.sublayer, txt, img);
            for (std::size_t k = 0; k < adapters.size(); ++k) {
                adapter_outs[k] = adapters[k]->sublayer_eval(prod_base.block, prod_base.sublayer, txt, img);
            }
            if (base_out.text.data != prod_base.values.data ||
                prod_blended.data != base_out.text.data) {
                ++mismatches;
            }
        } else {
            std::vector<FeatureMatrix> adapter_imgs;
            adapter_imgs.reserve(adapters.size());
            for (const auto& o : adapter_outs) {
                adapter_imgs.push_back(o.image);
            }
            const FeatureMatrix expected =
                oracles::blend_ref(base_out.image, adapter_imgs, priors_flat, 0, eps);
            if (base_out.image.data != prod_base.values.data || expected.data != prod_blended.data) {
                ++mismatches;
            }
            // both streams settled: apply the skip connections
            add_inplace(txt, base_out.text);
            add_inplace(img, expected);
        }
    }

    FeatureMatrix finish(int total_steps) {
        if (cur_step >= 0) {
            finish_step();
        }
        while (cur_step + 1 < total_steps) {
            ++cur_step;
            advance_plain();
        }
        return z;
    }
};

}  // namespace

TEST_CASE("alpha_weights implements the literal formula") {
    const double eps = 1e-6;
    BinaryPrior a(2, 2), b(2, 2), c(2, 2);
    b.data = {1, 0, 0, 1};
    const BlendWeights w = alpha_weights({a, b, c}, eps);

    // token 0 claimed by subject 1 only
    CHECK(w.alpha_at(0, 0) == 0.0);
    CHECK(w.alpha_at(0, 1) == 1.0 / (1.0 + eps));
    CHECK(w.alpha_at(0, 2) == 0.0);
    // token 1 unclaimed
    CHECK(w.alpha_at(1, 0) == 0.0);
    CHECK(w.alpha_at(1, 1) == 0.0);
    CHECK(w.alpha_at(1, 2) == 0.0);
    CHECK(w.claims[0] == 1);
    CHECK(w.claims[1] == 0);

    CHECK_THROWS_AS(alpha_weights({a, b, c}, 0.0), ParamError);
}

TEST_CASE("alpha_weights on overlapping priors matches the scalar formula") {
    const double eps = 1e-6;
    BinaryPrior a(1, 2), b(1, 2);
    a.data = {1, 0};
    b.data = {1, 0};  // deliberate overlap on token 0
    const BlendWeights w = alpha_weights({a, b}, eps);
    CHECK(w.alpha_at(0, 0) == 1.0 / (2.0 + eps));
    CHECK(w.alpha_at(0, 1) == 1.0 / (2.0 + eps));
    const double sum = w.alpha_at(0, 0) + w.alpha_at(0, 1);
    CHECK(sum <= 1.0);
    CHECK(sum >= 1.0 - 10 * eps);
}

TEST_CASE("alpha sums are one on claimed tokens and zero on background") {
    SeededRng rng(71);
    const double eps = 1e-6;
    for (int trial = 0; trial < 40; ++trial) {
        std::vector<BinaryPrior> priors;
        const int n = 1 + static_cast<int>(rng.uniform() * 4);
        for (int k = 0; k < n; ++k) {
            priors.push_back(random_prior(4, 4, 0.4, rng));
        }
        const BlendWeights w = alpha_weights(priors, eps);
        for (int p = 0; p < w.tokens; ++p) {
            double sum = 0.0;
            for (int k = 0; k < n; ++k) {
                sum += w.alpha_at(p, k);
            }
            if (w.claims[static_cast<std::size_t>(p)] == 0) {
                CHECK(sum == 0.0);
            } else {
                CHECK(sum <= 1.0);
                CHECK(sum >= 1.0 - 10 * eps);
            }
        }
    }
}

TEST_CASE("blend_residual keeps base values when no prior claims anything") {
    SeededRng rng(72);
    BlendConfig cfg;
    const ResidualRecord base = make_record(0, 1, Stream::Image, 16, 8, rng);
    std::vector<ResidualRecord> adapters{make_record(0, 1, Stream::Image, 16, 8, rng)};
    const BlendWeights w = alpha_weights({BinaryPrior(4, 4)}, cfg.epsilon);
    const ResidualRecord out = blend_residual(base, adapters, w, cfg);
    CHECK(out.values.data == base.values.data);
}

TEST_CASE("blend_residual substitutes adapter rows under a full prior") {
    SeededRng rng(73);
    BlendConfig cfg;
    cfg.epsilon = kTinyEps;
    const ResidualRecord base = make_record(1, 2, Stream::Image, 16, 8, rng);
    std::vector<ResidualRecord> adapters{make_record(1, 2, Stream::Image, 16, 8, rng)};
    const BlendWeights w = alpha_weights({full_prior(4, 4)}, cfg.epsilon);
    const ResidualRecord out = blend_residual(base, adapters, w, cfg);
    CHECK(out.values.data == adapters[0].values.data);  // alpha is exactly 1

    // prompt records never blend
    const ResidualRecord tbase = make_record(1, 2, Stream::Text, 8, 8, rng);
    std::vector<ResidualRecord> tadapters{make_record(1, 2, Stream::Text, 8, 8, rng)};
    const ResidualRecord tout = blend_residual(tbase, tadapters, w, cfg);
    CHECK(tout.values.data == tbase.values.data);

    // with the default epsilon the substitution is within 2e-6 relative
    BlendConfig dcfg;
    const BlendWeights wd = alpha_weights({full_prior(4, 4)}, dcfg.epsilon);
    const ResidualRecord near = blend_residual(base, adapters, wd, dcfg);
    for (std::size_t i = 0; i < near.values.data.size(); ++i) {
        CHECK(std::abs(near.values.data[i] - adapters[0].values.data[i]) <=
              2e-6 * std::abs(adapters[0].values.data[i]));
    }
}

TEST_CASE("blend_residual equals the scalar reference loop to the bit") {
    SeededRng rng(74);
    BlendConfig cfg;
    for (int trial = 0; trial < 50; ++trial) {
        const int h = 2 + static_cast<int>(rng.uniform() * 7);
        const int w = 2 + static_cast<int>(rng.uniform() * 7);
        const int cols = 1 + static_cast<int>(rng.uniform() * 31);
        const int t = 1 + static_cast<int>(rng.uniform() * 7);
        const int n = 1 + static_cast<int>(rng.uniform() * 4);
        const int s = h * w;

        std::vector<BinaryPrior> priors;
        std::vector<std::vector<std::uint8_t>> priors_flat;
        for (int k = 0; k < n; ++k) {
            priors.push_back(random_prior(h, w, rng.uniform(), rng));
            priors_flat.emplace_back(priors.back().data.begin(), priors.back().data.end());
        }
        const BlendWeights weights = alpha_weights(priors, cfg.epsilon);

        const ResidualRecord tbase = make_record(0, 1, Stream::Text, t, cols, rng);
        const ResidualRecord ibase = make_record(0, 1, Stream::Image, s, cols, rng);
        std::vector<ResidualRecord> tads, iads;
        for (int k = 0; k < n; ++k) {
            tads.push_back(make_record(0, 1, Stream::Text, t, cols, rng));
            iads.push_back(make_record(0, 1, Stream::Image, s, cols, rng));
        }

        // production path: per-stream records
        const ResidualRecord tout = blend_residual(tbase, tads, weights, cfg);
        const ResidualRecord iout = blend_residual(ibase, iads, weights, cfg);

        // oracle path: one concatenated token space, image tokens after prompt
        FeatureMatrix cat_base(t + s, cols);
        std::copy(tbase.values.data.begin(), tbase.values.data.end(), cat_base.data.begin());
        std::copy(ibase.values.data.begin(), ibase.values.data.end(),
                  cat_base.data.begin() + static_cast<std::ptrdiff_t>(t) * cols);
        std::vector<FeatureMatrix> cat_ads;
        for (int k = 0; k < n; ++k) {
            FeatureMatrix cat(t + s, cols);
            std::copy(tads[k].values.data.begin(), tads[k].values.data.end(), cat.data.begin());
            std::copy(iads[k].values.data.begin(), iads[k].values.data.end(),
                      cat.data.begin() + static_cast<std::ptrdiff_t>(t) * cols);
            cat_ads.push_back(std::move(cat));
        }
        const FeatureMatrix ref = oracles::blend_ref(cat_base, cat_ads, priors_flat, t, cfg.epsilon);

        for (int p = 0; p < t; ++p) {
            for (int c = 0; c < cols; ++c) {
                CHECK(tout.values.at(p, c) == ref.at(p, c));
            }
        }
        for (int p = 0; p < s; ++p) {
            for (int c = 0; c < cols; ++c) {
                CHECK(iout.values.at(p, c) == ref.at(t + p, c));
            }
        }
    }
}

TEST_CASE("blend_residual enforces the record contract") {
    SeededRng rng(75);
    BlendConfig cfg;
    const BlendWeights w = alpha_weights({full_prior(4, 4)}, cfg.epsilon);
    const ResidualRecord base = make_record(0, 1, Stream::Image, 16, 4, rng);
    std::vector<ResidualRecord> wrong_block{make_record(1, 1, Stream::Image, 16, 4, rng)};
    CHECK_THROWS_AS(blend_residual(base, wrong_block, w, cfg), ContractError);
    std::vector<ResidualRecord> wrong_sub{make_record(0, 2, Stream::Image, 16, 4, rng)};
    CHECK_THROWS_AS(blend_residual(base, wrong_sub, w, cfg), ContractError);
    std::vector<ResidualRecord> wrong_count{make_record(0, 1, Stream::Image, 16, 4, rng),
                                            make_record(0, 1, Stream::Image, 16, 4, rng)};
    CHECK_THROWS_AS(blend_residual(base, wrong_count, w, cfg), ContractError);
}

TEST_CASE("a closed gate reproduces plain denoising bitwise") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 81);
    const FeatureMatrix z1     = seeded_noise(model.config(), 81);
    const AdapterBundle bundle = make_bundle(model, "a", image_targets(), 2, 82);
    const BinaryPrior prior    = full_prior(8, 8);

    BlendConfig cfg;
    cfg.gate_t = 0.0;
    BlendTrace trace;
    const FeatureMatrix blended = blended_denoise(model, {bundle}, {prior}, z1, 8, prompt, cfg, &trace);
    const FeatureMatrix plain   = model.flow_denoise(z1, 8, prompt);
    CHECK(blended.data == plain.data);
    CHECK(trace.adapter_forwards == 0);
    CHECK(trace.base_forwards == 8);
    for (const auto& s : trace.steps) {
        CHECK_FALSE(s.blended);
    }
}

TEST_CASE("gate opens exactly at flow times at or below t") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 83);
    const FeatureMatrix z1     = seeded_noise(model.config(), 83);
    const AdapterBundle bundle = make_bundle(model, "a", image_targets(), 2, 84);

    BlendConfig cfg;  // gate_t = 0.90
    BlendTrace trace;
    blended_denoise(model, {bundle}, {full_prior(8, 8)}, z1, 16, prompt, cfg, &trace);
    long blended_steps = 0;
    for (const auto& s : trace.steps) {
        CHECK(s.blended == (s.flow_time <= 0.90));
        blended_steps += s.blended ? 1 : 0;
    }
    CHECK(blended_steps == 14);  // 1.0 and 0.9375 stay plain on the 16-step grid
    CHECK(trace.adapter_forwards == blended_steps);
    CHECK(trace.base_forwards == 16);
    REQUIRE(trace.per_adapter_forwards.size() == 1);
    CHECK(trace.per_adapter_forwards[0] == blended_steps);
}

TEST_CASE("zero-delta bundles leave the trajectory bitwise intact") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 85);
    const FeatureMatrix z1     = seeded_noise(model.config(), 85);
    const AdapterBundle zero   = make_zero_bundle(model, "zero", image_targets(), 2);

    SeededRng rng(86);
    const BinaryPrior prior = random_prior(8, 8, 0.5, rng);

    BlendConfig cfg;
    cfg.epsilon = kTinyEps;  // alpha exactly 1 on one-hot tokens
    BlendTrace trace;
    const FeatureMatrix blended =
        blended_denoise(model, {zero}, {prior}, z1, 16, prompt, cfg, &trace);
    const FeatureMatrix plain = model.flow_denoise(z1, 16, prompt);
    CHECK(blended.data == plain.data);
    CHECK(trace.adapter_forwards > 0);
    CHECK(trace.prompt_rows_base_identical);
    CHECK(trace.unclaimed_rows_base_identical);
}

TEST_CASE("full replay harness confirms every blended record, N=1 full prior") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 87);
    const FeatureMatrix z1     = seeded_noise(model.config(), 87);
    const AdapterBundle bundle = make_bundle(model, "a", image_targets(), 2, 88);
    const Model merged         = merged_model(model, bundle);
    const std::vector<BinaryPrior> priors{full_prior(8, 8)};

    BlendConfig cfg;
    cfg.gate_t = 1.0;  // every step blended
    const int steps = 4;

    ReplayHarness replay(model, {&merged}, priors, cfg.epsilon, prompt, steps, z1);
    BlendTrace trace;
    const FeatureMatrix produced = blended_denoise(
        model, {bundle}, priors, z1, steps, prompt, cfg, &trace,
        [&](int step, double, const ResidualRecord& base, const std::vector<FeatureMatrix>&,
            const FeatureMatrix& blended) { replay.on_record(step, base, blended); });
    const FeatureMatrix replayed = replay.finish(steps);

    CHECK(replay.mismatches == 0);
    CHECK(replay.records_seen == static_cast<long>(steps) * model.config().total_blocks() * 4);
    CHECK(replayed.data == produced.data);
    CHECK(trace.prompt_rows_base_identical);
}

TEST_CASE("two-subject run: unclaimed and prompt rows stay base per record") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 89);
    const FeatureMatrix z1     = seeded_noise(model.config(), 89);
    const AdapterBundle a = make_bundle(model, "a", image_targets(), 2, 90);
    const AdapterBundle b = make_bundle(model, "b", {"blocks.double.0.image.attn.wv"}, 1, 91);

    // disjoint priors leaving a background strip unclaimed
    BinaryPrior pa(8, 8), pb(8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 3; ++x) {
            pa.at(y, x) = 1;
        }
        for (int x = 5; x < 8; ++x) {
            pb.at(y, x) = 1;
        }
    }

    BlendConfig cfg;
    BlendTrace trace;
    long checked_rows = 0;
    long claimed_diffs = 0;
    blended_denoise(model, {a, b}, {pa, pb}, z1, 8, prompt, cfg, &trace,
                    [&](int, double, const ResidualRecord& base, const std::vector<FeatureMatrix>&,
                        const FeatureMatrix& blended) {
                        if (base.stream == Stream::Text) {
                            CHECK(blended.data == base.values.data);
                            return;
                        }
                        for (int y = 0; y < 8; ++y) {
                            for (int x = 3; x < 5; ++x) {  // the unclaimed strip
                                const int p = y * 8 + x;
                                for (int c = 0; c < blended.cols; ++c) {
                                    if (blended.at(p, c) != base.values.at(p, c)) {
                                        ++checked_rows;  // any mismatch is a failure
                                    }
                                }
                            }
                            for (int x = 0; x < 3; ++x) {  // claimed by subject a
                                const int p = y * 8 + x;
                                for (int c = 0; c < blended.cols; ++c) {
                                    claimed_diffs += blended.at(p, c) != base.values.at(p, c);
                                }
                            }
                        }
                    });
    CHECK(checked_rows == 0);
    CHECK(claimed_diffs > 0);  // the adapters do act inside their regions
    CHECK(trace.prompt_rows_base_identical);
    CHECK(trace.unclaimed_rows_base_identical);
    CHECK(trace.claimed_tokens[0] == 24);
    CHECK(trace.claimed_tokens[1] == 24);
}

TEST_CASE("N identical bundles with disjoint priors equal the union run") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 92);
    const FeatureMatrix z1     = seeded_noise(model.config(), 92);
    const AdapterBundle bundle = make_bundle(model, "a", image_targets(), 2, 93);

    BinaryPrior left(8, 8), right(8, 8), both(8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 8; ++x) {
            (x < 4 ? left : right).at(y, x) = 1;
            both.at(y, x) = 1;
        }
    }

    BlendConfig cfg;
    const FeatureMatrix split =
        blended_denoise(model, {bundle, bundle}, {left, right}, z1, 8, prompt, cfg);
    const FeatureMatrix merged = blended_denoise(model, {bundle}, {both}, z1, 8, prompt, cfg);
    CHECK(split.data == merged.data);
}

TEST_CASE("removing one subject only changes rows its prior claims") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 94);
    const FeatureMatrix z1     = seeded_noise(model.config(), 94);
    const AdapterBundle a = make_bundle(model, "a", image_targets(), 2, 95);
    const AdapterBundle b = make_bundle(model, "b", {"blocks.double.1.image.attn.wq"}, 1, 96);

    BinaryPrior pa(8, 8), pb(8, 8);
    for (int y = 0; y < 8; ++y) {
        for (int x = 0; x < 4; ++x) {
            pa.at(y, x) = 1;
        }
        for (int x = 4; x < 6; ++x) {
            pb.at(y, x) = 1;
        }
    }
    const Model merged_a = merged_model(model, a);
    const Model merged_b = merged_model(model, b);

    BlendConfig cfg;
    cfg.gate_t = 1.0;
    const int steps = 2;

    // replay the two-subject run; at every image record, also compute the
    // one-subject blend (subject b dropped) on the same pinned inputs and
    // demand equality outside pb
    ReplayHarness replay(model, {&merged_a, &merged_b},
                         std::vector<BinaryPrior>{pa, pb}, cfg.epsilon, prompt, steps, z1);
    long leak = 0;
    std::vector<std::vector<std::uint8_t>> pa_only{{pa.data.begin(), pa.data.end()}};
    blended_denoise(model, {a, b}, {pa, pb}, z1, steps, prompt, cfg, nullptr,
                    [&](int step, double, const ResidualRecord& base, const std::vector<FeatureMatrix>&,
                        const FeatureMatrix& blended) {
                        replay.on_record(step, base, blended);
                        if (base.stream != Stream::Image) {
                            return;
                        }
                        // replay.base_out/adapter_outs hold this sublayer's outputs
                        // on the pinned inputs of the full run
                        const FeatureMatrix without_b = oracles::blend_ref(
                            replay.base_out.image, {replay.adapter_outs[0].image}, pa_only, 0,
                            cfg.epsilon);
                        for (int p = 0; p < blended.rows; ++p) {
                            if (pb.data[static_cast<std::size_t>(p)]) {
                                continue;  // claimed by b: allowed to differ
                            }
                            for (int c = 0; c < blended.cols; ++c) {
                                if (without_b.at(p, c) != blended.at(p, c)) {
                                    ++leak;
                                }
                            }
                        }
                    });
    CHECK(replay.mismatches == 0);
    CHECK(leak == 0);
}

TEST_CASE("edit with a zero-delta adapter reconstructs the input bitwise") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 97);
    const FeatureMatrix z0     = seeded_noise(model.config(), 98);
    const AdapterBundle zero   = make_zero_bundle(model, "zero", image_targets(), 2);

    const std::vector<SubjectSpec> subjects{{"solo", {1, 2}, "zero"}};
    PriorParams pparams;
    BlendConfig cfg;
    cfg.epsilon = kTinyEps;
    const EditResult edit = edit_image(model, {zero}, subjects, z0, 16, pparams, cfg, prompt);

    const FeatureMatrix z1      = model.flow_invert(z0, 16, prompt);
    const FeatureMatrix recon   = model.flow_denoise(z1, 16, prompt);
    CHECK(edit.latent.data == recon.data);
    CHECK(edit.recovered_noise.data == z1.data);

    // reconstruction quality is within the calibrated 16-step bound
    CHECK(rms_diff(edit.latent, z0) < 0.09);
}

TEST_CASE("edit reconstruction error drops when steps double") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 99);
    const FeatureMatrix z0     = seeded_noise(model.config(), 100);
    const AdapterBundle zero   = make_zero_bundle(model, "zero", image_targets(), 1);
    const std::vector<SubjectSpec> subjects{{"solo", {1}, "zero"}};
    PriorParams pparams;
    BlendConfig cfg;
    cfg.epsilon = kTinyEps;

    double prev = 1e300;
    for (const int steps : {8, 16, 32}) {
        const EditResult edit = edit_image(model, {zero}, subjects, z0, steps, pparams, cfg, prompt);
        const double err = rms_diff(edit.latent, z0);
        CHECK(err < prev);
        prev = err;
    }
}

TEST_CASE("blended_denoise validates inputs") {
    const Model model = Model::init(toy_config());
    const FeatureMatrix prompt = seeded_prompt(model.config(), 101);
    const FeatureMatrix z1     = seeded_noise(model.config(), 101);
    const AdapterBundle bundle = make_bundle(model, "a", image_targets(), 2, 102);
    BlendConfig cfg;
    CHECK_THROWS_AS(blended_denoise(model, {}, {}, z1, 8, prompt, cfg), ParamError);
    CHECK_THROWS_AS(blended_denoise(model, {bundle}, {}, z1, 8, prompt, cfg), ParamError);
    CHECK_THROWS_AS(
        blended_denoise(model, {bundle}, {full_prior(4, 4)}, z1, 8, prompt, cfg), ShapeError);
    BlendConfig bad;
    bad.gate_t = 1.5;
    CHECK_THROWS_AS(blended_denoise(model, {bundle}, {full_prior(8, 8)}, z1, 8, prompt, bad),
                    ParamError);
}
