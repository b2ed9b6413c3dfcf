#include "lorablend/adapter.hpp"

#include <cstring>

#include "lorablend/io.hpp"

namespace lorablend {

namespace {

constexpr std::uint32_t kAdapterVersion = 1;
const char kAdapterMagic[4] = {'L', 'O', 'R', 'A'};

void validate_delta(const LoRADelta& d) {
    if (d.rank < 1) {
        throw FormatError("delta rank must be >= 1 for " + d.target, 0);
    }
    if (d.a.rows != d.rank || d.b.cols != d.rank) {
        throw ShapeError("delta " + d.target + ": A must be r x k_in and B must be d_out x r");
    }
    if (d.rank > std::min(d.b.rows, d.a.cols)) {
        throw ShapeError("delta " + d.target + ": rank exceeds min(d_out, k_in)");
    }
}

}  // namespace

AdapterBundle load_adapter(const std::string& path) {
    ByteReader br = ByteReader::from_file(path);
    char magic[4];
    br.raw(magic, 4, "magic");
    if (std::memcmp(magic, kAdapterMagic, 4) != 0) {
        throw FormatError("bad adapter magic, expected LORA", 0);
    }
    const std::uint32_t version = br.u32();
    if (version != kAdapterVersion) {
        throw FormatError("unsupported adapter version " + std::to_string(version), 4);
    }
    AdapterBundle bundle;
    bundle.name = br.str();
    const std::int64_t trigger = br.i64();
    if (trigger >= 0) {
        bundle.trigger_token = static_cast<int>(trigger);
    }
    const std::uint32_t entries = br.u32();
    for (std::uint32_t e = 0; e < entries; ++e) {
        LoRADelta d;
        d.target = br.str();
        const std::uint32_t r     = br.u32();
        const std::uint32_t d_out = br.u32();
        const std::uint32_t k_in  = br.u32();
        if (r == 0 || d_out == 0 || k_in == 0) {
            throw FormatError("zero dimension in shape table for " + d.target, br.offset());
        }
        if (r > std::min(d_out, k_in)) {
            throw FormatError("rank exceeds min(d_out, k_in) for " + d.target, br.offset());
        }
        d.rank = static_cast<int>(r);
        d.a    = FeatureMatrix(static_cast<int>(r), static_cast<int>(k_in));
        for (double& v : d.a.data) {
            v = br.f64();
        }
        d.b = FeatureMatrix(static_cast<int>(d_out), static_cast<int>(r));
        for (double& v : d.b.data) {
            v = br.f64();
        }
        d.scale = br.f64();
        if (bundle.deltas.count(d.target)) {
            throw FormatError("duplicate entry for target " + d.target, br.offset());
        }
        bundle.deltas.emplace(d.target, std::move(d));
    }
    if (!br.at_end()) {
        throw FormatError("trailing bytes after last entry", br.offset());
    }
    return bundle;
}

void save_adapter(const AdapterBundle& bundle, const std::string& path) {
    ByteWriter bw;
    bw.bytes(kAdapterMagic, 4);
    bw.u32(kAdapterVersion);
    bw.str(bundle.name);
    bw.i64(bundle.trigger_token ? static_cast<std::int64_t>(*bundle.trigger_token) : -1);
    bw.u32(static_cast<std::uint32_t>(bundle.deltas.size()));
    for (const auto& [target, d] : bundle.deltas) {
        validate_delta(d);
        bw.str(target);
        bw.u32(static_cast<std::uint32_t>(d.rank));
        bw.u32(static_cast<std::uint32_t>(d.b.rows));
        bw.u32(static_cast<std::uint32_t>(d.a.cols));
        for (const double v : d.a.data) {
            bw.f64(v);
        }
        for (const double v : d.b.data) {
            bw.f64(v);
        }
        bw.f64(d.scale);
    }
    bw.save(path);
}

FeatureMatrix merge_weights(const FeatureMatrix& w0, const LoRADelta& delta) {
    if (delta.b.rows != w0.rows || delta.a.cols != w0.cols || delta.b.cols != delta.a.rows) {
        throw ShapeError("merge_weights: delta " + delta.target + " does not fit " +
                         std::to_string(w0.rows) + "x" + std::to_string(w0.cols));
    }
    const FeatureMatrix ba = matmul(delta.b, delta.a);
    FeatureMatrix merged   = w0;
    for (std::size_t i = 0; i < merged.data.size(); ++i) {
        merged.data[i] += delta.scale * ba.data[i];
    }
    return merged;
}

void check_compatible(const Model& model, const AdapterBundle& bundle) {
    std::string offending;
    for (const auto& [target, d] : bundle.deltas) {
        const FeatureMatrix* w0 = model.find_tensor(target);
        if (!w0) {
            offending += (offending.empty() ? "" : ", ") + target + " (no such tensor)";
            continue;
        }
        if (d.b.rows != w0->rows || d.a.cols != w0->cols || d.b.cols != d.rank || d.a.rows != d.rank) {
            offending += (offending.empty() ? "" : ", ") + target + " (shape mismatch)";
        }
    }
    if (!offending.empty()) {
        throw CompatError("adapter '" + bundle.name + "' incompatible with model: " + offending);
    }
}

Model merged_model(const Model& model, const AdapterBundle& bundle) {
    check_compatible(model, bundle);
    Model merged = model;
    merged.for_each_tensor([&](const std::string& name, FeatureMatrix& w) {
        const auto it = bundle.deltas.find(name);
        if (it != bundle.deltas.end()) {
            w = merge_weights(w, it->second);
        }
    });
    return merged;
}

std::vector<ResidualRecord> adapter_forward(const Model& model, const AdapterBundle& bundle,
                                            const TokenState& state, const TapRequest& taps) {
    const Model merged = merged_model(model, bundle);
    ForwardResult fwd  = merged.forward_pass(state, taps);
    return std::move(fwd.records);
}

}  // namespace lorablend
