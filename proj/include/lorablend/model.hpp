#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lorablend/tensor.hpp"

namespace lorablend {

struct ModelConfig {
    int channels      = 32;  // C = heads * head_dim
    int grid_h        = 8;
    int grid_w        = 8;
    int prompt_tokens = 8;   // T
    int heads         = 4;
    int head_dim      = 8;
    int double_blocks = 2;   // D
    int single_blocks = 2;   // G
    std::uint64_t seed = 0;

    int image_tokens() const { return grid_h * grid_w; }
    int total_blocks() const { return double_blocks + single_blocks; }
    int last_double_block() const { return double_blocks - 1; }

    void validate() const;  // ParamError when any invariant is violated
    bool operator==(const ModelConfig&) const = default;
};

enum class Stream { Text, Image };

// Token features flowing through the transformer. `temb` is the timestep
// embedding added to every token before the first block.
struct TokenState {
    FeatureMatrix text;          // T x C
    FeatureMatrix image;         // S x C
    std::vector<double> temb;    // C, may be empty (treated as zeros)
};

// One sublayer output as it is fed back through the skip connection.
// sublayer: 1 = attention, 2 = MLP.
struct ResidualRecord {
    int block    = 0;
    int sublayer = 0;
    Stream stream = Stream::Image;
    FeatureMatrix values;
};

// Per-head image queries and text keys harvested at one block.
struct AttentionCapture {
    int block    = 0;
    int head_dim = 0;
    std::vector<FeatureMatrix> image_queries;  // per head, S x d
    std::vector<FeatureMatrix> text_keys;      // per head, T x d
};

struct TapRequest {
    bool residuals = false;
    std::vector<int> capture_blocks;
};

// Mutates a record before its values are added to the stream.
using ResidualHook = std::function<void(ResidualRecord&)>;
// Same, with the denoising step and flow time attached.
using StepHook = std::function<void(int step, double flow_time, ResidualRecord&)>;

struct ForwardResult {
    TokenState state;
    std::vector<ResidualRecord> records;
    std::vector<AttentionCapture> captures;
};

struct SublayerOut {
    FeatureMatrix text;
    FeatureMatrix image;
};

// Receives the base model's sublayer output plus each adapter model's output
// for the same (block, sublayer, stream) on identical inputs, and returns the
// values that go through the skip connection.
using MultiCombine =
    std::function<FeatureMatrix(const ResidualRecord& base, const std::vector<FeatureMatrix>& adapters)>;

// Miniature multi-modal rectified-flow transformer: D double-stream blocks
// (separate text/image parameters, joint attention over the concatenated
// sequence, text tokens first) followed by G single-stream blocks (one
// shared parameter set applied to the concatenated sequence). Every
// sublayer output is a pure additive residual, so the forward output equals
// the embedded inputs plus the sum of all records, bit-exactly.
class Model {
public:
    static Model init(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    // Named weight tensors in the fixed declaration order used by the
    // checkpoint format. Names are stable; see docs/formats.md.
    void for_each_tensor(const std::function<void(const std::string&, FeatureMatrix&)>& fn);
    void for_each_tensor(const std::function<void(const std::string&, const FeatureMatrix&)>& fn) const;
    FeatureMatrix* find_tensor(const std::string& name);
    const FeatureMatrix* find_tensor(const std::string& name) const;
    std::uint64_t weight_checksum() const;

    // Input preparation: token features + mapped positional features + temb.
    TokenState embed_inputs(const TokenState& state) const;

    // Evaluates one sublayer of one block on the given streams without
    // touching them. sublayer: 1 = attention, 2 = MLP.
    SublayerOut sublayer_eval(int block, int sublayer, const FeatureMatrix& text,
                              const FeatureMatrix& image, AttentionCapture* capture = nullptr) const;

    ForwardResult forward_pass(const TokenState& state, const TapRequest& taps,
                               const ResidualHook& hook = {}) const;

    // Lock-step forward over several weight variants sharing one stream:
    // models[0] drives embeddings and captures; every model evaluates each
    // sublayer on the identical inputs and `combine` picks what is added.
    static ForwardResult forward_multi(const std::vector<const Model*>& models, const TokenState& state,
                                       const TapRequest& taps, const MultiCombine& combine);

    std::vector<double> time_embedding(double t) const;
    FeatureMatrix velocity_head(const FeatureMatrix& image_out) const;

    // Velocity field of the rectified flow at (z, t) under the given prompt.
    FeatureMatrix velocity(const FeatureMatrix& z, double t, const FeatureMatrix& prompt) const;

    // Euler integration z_{t-dt} = z_t - dt * v(z_t, t) on the uniform grid
    // t = 1 -> 0. The hook may replace any tapped residual per step.
    FeatureMatrix flow_denoise(const FeatureMatrix& z1, int steps, const FeatureMatrix& prompt,
                               const StepHook& hook = {}) const;

    // Reverse Euler z_{t+dt} = z_t + dt * v(z_t, t) on the grid t = 0 -> 1.
    FeatureMatrix flow_invert(const FeatureMatrix& z0, int steps, const FeatureMatrix& prompt) const;

    // Checkpoint: magic "MDIT", version, config block, weights in
    // declaration order as raw little-endian float64.
    void save(const std::string& path) const;
    static Model load(const std::string& path);

private:
    explicit Model(const ModelConfig& cfg);

    struct StreamWeights {
        FeatureMatrix norm_attn;  // 1 x C
        FeatureMatrix wq, wk, wv, wo;  // C x C, stored out x in
        FeatureMatrix norm_mlp;   // 1 x C
        FeatureMatrix mlp_w1;     // 2C x C
        FeatureMatrix mlp_w2;     // C x 2C
    };
    struct DoubleBlockWeights {
        StreamWeights text;
        StreamWeights image;
    };

    SublayerOut attention_double(const DoubleBlockWeights& w, const FeatureMatrix& text,
                                 const FeatureMatrix& image, int block, AttentionCapture* capture) const;
    SublayerOut attention_single(const StreamWeights& w, const FeatureMatrix& text,
                                 const FeatureMatrix& image, int block, AttentionCapture* capture) const;

    ModelConfig cfg_;
    FeatureMatrix pos_text_w_, pos_image_w_, time_w_;  // C x C maps
    std::vector<DoubleBlockWeights> dbl_;
    std::vector<StreamWeights> sgl_;
    FeatureMatrix head_norm_, head_w_;
    FeatureMatrix pos_feat_text_, pos_feat_image_;  // fixed sinusoidal features
};

// Seeded synthetic prompt embedding (T x C) and noise latent (S x C).
FeatureMatrix seeded_prompt(const ModelConfig& cfg, std::uint64_t seed);
FeatureMatrix seeded_noise(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace lorablend
