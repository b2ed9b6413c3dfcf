#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lorablend/model.hpp"
#include "lorablend/tensor.hpp"

namespace lorablend {

// Low-rank increment for one target weight: delta = scale * B * A with
// B (d_out x r) and A (r x k_in), matching the out x in weight storage.
struct LoRADelta {
    std::string target;  // tensor name in the model
    int rank = 0;
    FeatureMatrix a;     // r x k_in
    FeatureMatrix b;     // d_out x r
    double scale = 1.0;
};

struct AdapterBundle {
    std::string name;
    std::optional<int> trigger_token;  // carried as metadata only
    std::map<std::string, LoRADelta> deltas;  // keyed by target tensor name
};

// Adapter file: magic "LORA", version u32, name, trigger token i64 (-1 when
// absent), entry count u32, then per entry target id, r, d_out, k_in,
// A row-major f64, B row-major f64, scale f64. See docs/formats.md.
AdapterBundle load_adapter(const std::string& path);
void save_adapter(const AdapterBundle& bundle, const std::string& path);

// w0 + scale * B * A. ShapeError on incompatible dimensions.
FeatureMatrix merge_weights(const FeatureMatrix& w0, const LoRADelta& delta);

// CompatError listing every offending layer when the bundle does not fit.
void check_compatible(const Model& model, const AdapterBundle& bundle);

// Copy of the model with every targeted weight merged. The input model is
// untouched.
Model merged_model(const Model& model, const AdapterBundle& bundle);

// Forward pass of the merged model; returns the tapped residuals F^(k).
std::vector<ResidualRecord> adapter_forward(const Model& model, const AdapterBundle& bundle,
                                            const TokenState& state, const TapRequest& taps);

}  // namespace lorablend
