#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "lorablend/adapter.hpp"
#include "lorablend/model.hpp"
#include "lorablend/prior.hpp"
#include "lorablend/tensor.hpp"

namespace lorablend {

// Per-token blending weights: alpha_k(p) = prior_k(p) / (claims(p) + eps),
// zero everywhere for unclaimed tokens. Tokens index the S image cells in
// row-major grid order; prompt tokens never receive weights. In the
// concatenated sequence (text first) the image-token set is
// {T, ..., T+S-1}, realized here by stream tags on the records.
struct BlendWeights {
    int tokens     = 0;  // S
    int subjects   = 0;  // N
    double epsilon = 1e-6;
    std::vector<double> alpha;  // tokens x subjects, row-major
    std::vector<int> claims;    // per-token claim count

    double alpha_at(int p, int k) const { return alpha[static_cast<std::size_t>(p) * subjects + k]; }
};

struct BlendConfig {
    double gate_t  = 0.90;  // blending active at flow times <= gate_t; 0 disables
    double epsilon = 1e-6;

    void validate() const;
};

BlendWeights alpha_weights(const std::vector<BinaryPrior>& priors, double epsilon);

// One record through the blending rule: prompt-stream records and unclaimed
// image rows keep the base values bitwise; claimed rows take
// sum_k alpha_k(p) * F_k(p) in fixed subject order.
ResidualRecord blend_residual(const ResidualRecord& base, const std::vector<ResidualRecord>& adapters,
                              const BlendWeights& weights, const BlendConfig& cfg);

struct StepGate {
    int step         = 0;
    double flow_time = 0.0;
    bool blended     = false;
};

struct BlendTrace {
    std::vector<StepGate> steps;
    long base_forwards    = 0;
    long adapter_forwards = 0;              // N per blended step
    std::vector<long> per_adapter_forwards; // one counter per bundle
    std::vector<int> claimed_tokens;        // per subject
    bool prompt_rows_base_identical    = true;
    bool unclaimed_rows_base_identical = true;
    std::uint64_t final_checksum = 0;
};

// Called once per blended record with the base output, every adapter's
// output on the identical inputs, and the blended values.
using BlendObserver = std::function<void(int step, double flow_time, const ResidualRecord& base,
                                         const std::vector<FeatureMatrix>& adapters,
                                         const FeatureMatrix& blended)>;

// Gated Euler denoising: steps at flow time above cfg.gate_t run the plain
// backbone; at or below it, the base and all merged adapter models run in
// lock step on shared block inputs and every sublayer residual is blended
// before its skip connection.
FeatureMatrix blended_denoise(const Model& model, const std::vector<AdapterBundle>& bundles,
                              const std::vector<BinaryPrior>& priors, const FeatureMatrix& z1,
                              int steps, const FeatureMatrix& prompt, const BlendConfig& cfg,
                              BlendTrace* trace = nullptr, const BlendObserver& observer = {});

struct EditResult {
    FeatureMatrix latent;
    FeatureMatrix recovered_noise;
    PriorExtraction extraction;
    BlendTrace trace;
};

// Invert the input latent, extract priors on the recovered trajectory, then
// run the blended denoising from the recovered noise.
EditResult edit_image(const Model& model, const std::vector<AdapterBundle>& bundles,
                      const std::vector<SubjectSpec>& subjects, const FeatureMatrix& z0_input,
                      int steps, const PriorParams& pparams, const BlendConfig& cfg,
                      const FeatureMatrix& prompt);

}  // namespace lorablend
