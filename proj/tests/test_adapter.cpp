#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "lorablend/adapter.hpp"
#include "lorablend/io.hpp"
#include "lorablend/oracles.hpp"
#include "test_util.hpp"

using namespace lorablend;
using namespace lorablend::testutil;

namespace {

std::string temp_path(const std::string& name) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "lorablend_adapter_test";
    fs::create_directories(dir);
    return (dir / name).string();
}

bool bundles_equal(const AdapterBundle& x, const AdapterBundle& y) {
    if (x.name != y.name || x.trigger_token != y.trigger_token || x.deltas.size() != y.deltas.size()) {
        return false;
    }
    for (const auto& [target, d] : x.deltas) {
        const auto it = y.deltas.find(target);
        if (it == y.deltas.end()) {
            return false;
        }
        const LoRADelta& e = it->second;
        if (d.rank != e.rank || d.scale != e.scale || d.a.data != e.a.data || d.b.data != e.b.data) {
            return false;
        }
    }
    return true;
}

}  // namespace

TEST_CASE("adapter file round trip is exact both ways") {
    const Model model = Model::init(toy_config());
    AdapterBundle b   = make_bundle(model, "subjectA",
                                    {"blocks.double.0.image.attn.wq", "blocks.double.1.image.mlp.w1"}, 2, 31);
    b.trigger_token = 3;

    const std::string p1 = temp_path("a.lora");
    save_adapter(b, p1);
    const AdapterBundle loaded = load_adapter(p1);
    CHECK(bundles_equal(b, loaded));

    // load o save is byte identity on canonical files
    const std::string p2 = temp_path("a2.lora");
    save_adapter(loaded, p2);
    CHECK(fnv1a_file(p1) == fnv1a_file(p2));
}

TEST_CASE("truncated adapter files raise format errors, not crashes") {
    const Model model = Model::init(toy_config());
    const AdapterBundle b = make_bundle(model, "t", {"blocks.double.0.image.attn.wq"}, 1, 32);
    const std::string p   = temp_path("full.lora");
    save_adapter(b, p);

    std::ifstream in(p, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    for (const std::size_t keep : {std::size_t{0}, std::size_t{3}, std::size_t{9}, bytes.size() / 2,
                                   bytes.size() - 1}) {
        const std::string pt = temp_path("trunc.lora");
        std::ofstream out(pt, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(keep));
        out.close();
        CHECK_THROWS_AS(load_adapter(pt), FormatError);
    }
}

TEST_CASE("hand-built minimal file parses to the documented shapes") {
    // One delta: B is 2x1, A is 1x3, r = 1, built byte-by-byte from the
    // format description in docs/formats.md.
    ByteWriter bw;
    bw.bytes("LORA", 4);
    bw.u32(1);           // version
    bw.str("mini");      // bundle name
    bw.i64(-1);          // no trigger token
    bw.u32(1);           // entry count
    bw.str("layer.w");   // target id
    bw.u32(1);           // r
    bw.u32(2);           // d_out
    bw.u32(3);           // k_in
    bw.f64(0.5);         // A row-major (1x3)
    bw.f64(-1.5);
    bw.f64(2.0);
    bw.f64(1.0);         // B row-major (2x1)
    bw.f64(-2.0);
    bw.f64(0.75);        // scale
    const std::string p = temp_path("golden.lora");
    bw.save(p);

    const AdapterBundle b = load_adapter(p);
    CHECK(b.name == "mini");
    CHECK_FALSE(b.trigger_token.has_value());
    REQUIRE(b.deltas.size() == 1);
    const LoRADelta& d = b.deltas.at("layer.w");
    CHECK(d.rank == 1);
    CHECK(d.b.rows == 2);
    CHECK(d.b.cols == 1);
    CHECK(d.a.rows == 1);
    CHECK(d.a.cols == 3);
    CHECK(d.a.at(0, 1) == -1.5);
    CHECK(d.b.at(1, 0) == -2.0);
    CHECK(d.scale == 0.75);
}

TEST_CASE("shape-table violations in adapter files are format errors") {
    // r > min(d_out, k_in) must be rejected at parse time
    ByteWriter bw;
    bw.bytes("LORA", 4);
    bw.u32(1);
    bw.str("bad");
    bw.i64(-1);
    bw.u32(1);
    bw.str("layer.w");
    bw.u32(3);  // r
    bw.u32(2);  // d_out
    bw.u32(3);  // k_in -> min is 2 < r
    const std::string p = temp_path("badrank.lora");
    bw.save(p);
    CHECK_THROWS_AS(load_adapter(p), FormatError);

    // duplicate targets are rejected too
    const Model model = Model::init(toy_config());
    const AdapterBundle b = make_bundle(model, "dup", {"blocks.double.0.image.attn.wq"}, 1, 39);
    const std::string canonical = temp_path("dup.lora");
    save_adapter(b, canonical);
    std::ifstream in(canonical, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    // splice the single entry in twice and bump the count from 1 to 2
    const std::size_t header_len = 4 + 4 + (4 + 3) + 8;  // magic, version, name, trigger
    std::vector<char> doubled(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header_len));
    doubled.push_back(2);
    doubled.insert(doubled.end(), 3, 0);  // u32 entry count = 2, little-endian
    doubled.insert(doubled.end(), bytes.begin() + static_cast<std::ptrdiff_t>(header_len + 4), bytes.end());
    doubled.insert(doubled.end(), bytes.begin() + static_cast<std::ptrdiff_t>(header_len + 4), bytes.end());
    const std::string dup = temp_path("dup2.lora");
    std::ofstream out(dup, std::ios::binary);
    out.write(doubled.data(), static_cast<std::streamsize>(doubled.size()));
    out.close();
    CHECK_THROWS_AS(load_adapter(dup), FormatError);
}

TEST_CASE("merge_weights leaves w0 alone for zero deltas") {
    SeededRng rng(33);
    const FeatureMatrix w0 = random_matrix(6, 5, rng);

    LoRADelta zero_b;
    zero_b.target = "x";
    zero_b.rank   = 2;
    zero_b.a      = random_matrix(2, 5, rng);
    zero_b.b      = FeatureMatrix(6, 2);
    CHECK(merge_weights(w0, zero_b).data == w0.data);

    LoRADelta zero_scale;
    zero_scale.target = "x";
    zero_scale.rank   = 2;
    zero_scale.a      = random_matrix(2, 5, rng);
    zero_scale.b      = random_matrix(6, 2, rng);
    zero_scale.scale  = 0.0;
    CHECK(merge_weights(w0, zero_scale).data == w0.data);
}

TEST_CASE("merged deltas have the declared numerical rank") {
    SeededRng rng(34);
    const FeatureMatrix w0 = random_matrix(8, 7, rng);
    LoRADelta d;
    d.target = "x";
    d.rank   = 2;
    d.a      = random_matrix(2, 7, rng);
    d.b      = random_matrix(8, 2, rng);
    d.scale  = 1.3;

    const FeatureMatrix merged = merge_weights(w0, d);
    const FeatureMatrix delta  = sub(merged, w0);
    CHECK(oracles::numerical_rank(delta, 1e-8) == 2);
}

TEST_CASE("merge_weights rejects mismatched shapes") {
    SeededRng rng(35);
    const FeatureMatrix w0 = random_matrix(4, 4, rng);
    LoRADelta d;
    d.target = "x";
    d.rank   = 1;
    d.a      = random_matrix(1, 5, rng);  // k_in mismatch
    d.b      = random_matrix(4, 1, rng);
    CHECK_THROWS_AS(merge_weights(w0, d), ShapeError);
}

TEST_CASE("zero bundles reproduce base residuals bitwise and mutate nothing") {
    const Model model = Model::init(toy_config());
    const AdapterBundle zero =
        make_zero_bundle(model, "zero", {"blocks.double.0.image.attn.wq", "blocks.single.0.mlp.w1"}, 2);

    const std::uint64_t before = model.weight_checksum();
    const TokenState s         = make_state(model, 21);

    const ForwardResult base = model.forward_pass(s, TapRequest{true, {}});
    const std::vector<ResidualRecord> recs = adapter_forward(model, zero, s, TapRequest{true, {}});
    REQUIRE(recs.size() == base.records.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(recs[i].values.data == base.records[i].values.data);
    }
    CHECK(model.weight_checksum() == before);

    // a second application still leaves the base untouched
    const std::vector<ResidualRecord> recs2 = adapter_forward(model, zero, s, TapRequest{true, {}});
    CHECK(model.weight_checksum() == before);
    REQUIRE(recs2.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(recs2[i].values.data == recs[i].values.data);
    }
}

TEST_CASE("a block-0 bundle changes later blocks only through propagated inputs") {
    const Model model = Model::init(toy_config());
    const AdapterBundle b0 = make_bundle(model, "b0", {"blocks.double.0.image.attn.wq"}, 2, 36, 0.2);
    const Model merged     = merged_model(model, b0);

    const TokenState s = make_state(model, 22);
    const ForwardResult base_fwd   = model.forward_pass(s, TapRequest{true, {}});
    const ForwardResult merged_fwd = merged.forward_pass(s, TapRequest{true, {}});

    // residuals at block 0 attention differ, and the change propagates into
    // later blocks through their inputs
    bool block0_differs = false;
    bool block1_differs = false;
    for (std::size_t i = 0; i < base_fwd.records.size(); ++i) {
        const auto& rec = base_fwd.records[i];
        if (rec.values.data == merged_fwd.records[i].values.data) {
            continue;
        }
        if (rec.block == 0 && rec.sublayer == 1) {
            block0_differs = true;
        }
        if (rec.block == 1) {
            block1_differs = true;
        }
    }
    CHECK(block0_differs);
    CHECK(block1_differs);

    // pin block-1 inputs to the base trajectory: the merged model's block-1
    // weights are untouched, so its sublayer outputs match base bitwise
    TokenState pinned = model.embed_inputs(s);
    for (const auto& rec : base_fwd.records) {
        if (rec.block == 0) {
            add_inplace(rec.stream == Stream::Text ? pinned.text : pinned.image, rec.values);
        }
    }
    const SublayerOut base_b1   = model.sublayer_eval(1, 1, pinned.text, pinned.image);
    const SublayerOut merged_b1 = merged.sublayer_eval(1, 1, pinned.text, pinned.image);
    CHECK(base_b1.text.data == merged_b1.text.data);
    CHECK(base_b1.image.data == merged_b1.image.data);
}

TEST_CASE("incompatible bundles are rejected with the offending layers named") {
    const Model model = Model::init(toy_config());

    AdapterBundle ghost;
    ghost.name = "ghost";
    LoRADelta d;
    d.target = "blocks.double.9.image.attn.wq";
    d.rank   = 1;
    d.a      = FeatureMatrix(1, 32);
    d.b      = FeatureMatrix(32, 1);
    ghost.deltas.emplace(d.target, d);
    CHECK_THROWS_WITH_AS(merged_model(model, ghost),
                         doctest::Contains("blocks.double.9.image.attn.wq"), CompatError);

    AdapterBundle bad;
    bad.name = "bad";
    LoRADelta e;
    e.target = "blocks.double.0.image.attn.wq";
    e.rank   = 1;
    e.a      = FeatureMatrix(1, 16);  // wrong k_in
    e.b      = FeatureMatrix(32, 1);
    bad.deltas.emplace(e.target, e);
    CHECK_THROWS_AS(merged_model(model, bad), CompatError);
}

TEST_CASE("bundles with different ranks and target sets coexist") {
    const Model model = Model::init(toy_config());
    const AdapterBundle a = make_bundle(model, "a", {"blocks.double.0.image.attn.wq"}, 1, 37);
    const AdapterBundle b =
        make_bundle(model, "b", {"blocks.double.1.image.mlp.w2", "blocks.single.1.attn.wv"}, 3, 38);

    const TokenState s = make_state(model, 23);
    const auto ra = adapter_forward(model, a, s, TapRequest{true, {}});
    const auto rb = adapter_forward(model, b, s, TapRequest{true, {}});
    CHECK(ra.size() == rb.size());
    CHECK(ra.size() == static_cast<std::size_t>(model.config().total_blocks()) * 4);
}
