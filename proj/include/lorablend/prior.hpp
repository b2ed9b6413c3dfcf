#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lorablend/model.hpp"
#include "lorablend/tensor.hpp"

namespace lorablend {

// One subject to localize: the prompt-token indices naming it and the
// adapter bound to it at blend time.
struct SubjectSpec {
    std::string name;
    std::vector<int> token_indices;
    std::string adapter;
};

struct PriorParams {
    double gamma     = 0.94;  // flow time of the attention capture
    double tau       = 0.7;   // binarization quantile
    int kernel_size  = 3;
    double sigma     = 1.0;
    int max_passes   = 10;    // P
    int capture_block = -1;   // -1 = last double-stream block

    void validate() const;
    int resolve_capture_block(const ModelConfig& cfg) const;
};

struct BlobReport {
    int passes_used = 0;
    bool exhausted  = false;  // smoothing loop hit P without reaching <= 1 component
    int components  = 0;      // super-threshold components of the final map
};

// Cross-attention map for one subject: per head, softmax(Q_image K^T /
// sqrt(d)) over all text keys, columns in token_set summed, heads averaged,
// reshaped to the latent grid and renormalized to [0,1].
Grid2D attention_map(const AttentionCapture& capture, const std::vector<int>& token_set,
                     int grid_h, int grid_w);

// Iterative Gaussian smoothing until the super-threshold area is a single
// connected component, then grayscale reconstruction from the global peak.
// The loop threshold is quantile(m, tau); components use 8-connectivity.
Grid2D homogeneous_blob(const Grid2D& m, const PriorParams& params, BlobReport* report = nullptr);

// Cell -> 1 iff m(cell) >= quantile(m, tau); an all-zero map stays all-zero.
BinaryPrior binarize(const Grid2D& m, double tau);

// Per-cell winner across subjects (ties -> lowest subject index) turned into
// one-hot priors; the outputs partition the grid exactly.
std::vector<BinaryPrior> argmax_partition(const std::vector<Grid2D>& maps);

struct PriorExtraction {
    std::vector<BinaryPrior> priors;     // one-hot winners intersected with binarized blobs
    std::vector<BinaryPrior> onehot;     // pre-intersection argmax partition
    std::vector<Grid2D> attention_maps;  // raw renormalized cross-attention maps
    std::vector<Grid2D> blobs;           // smoothed maps fed to the argmax
    std::vector<BlobReport> blob_reports;
    double capture_time = 1.0;           // flow time of the capture forward
    int capture_block   = 0;
    int forwards_used   = 0;
};

// Pseudo-denoising run from z1 down the uniform grid; attention is captured
// on the forward pass at the first grid time <= gamma (the last grid point
// when gamma is below the whole grid). No adapters are involved.
PriorExtraction extract_priors(const Model& model, const FeatureMatrix& prompt,
                               const std::vector<SubjectSpec>& subjects, const PriorParams& params,
                               int steps, const FeatureMatrix& z1);
PriorExtraction extract_priors(const Model& model, const FeatureMatrix& prompt,
                               const std::vector<SubjectSpec>& subjects, const PriorParams& params,
                               int steps, std::uint64_t noise_seed);

}  // namespace lorablend
