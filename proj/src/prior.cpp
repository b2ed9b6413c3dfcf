#include "lorablend/prior.hpp"

#include <algorithm>
#include <cmath>

namespace lorablend {

void PriorParams::validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) {
        throw ParamError("prior params: gamma must be in (0,1]");
    }
    if (!(tau > 0.0 && tau < 1.0)) {
        throw ParamError("prior params: tau must be in (0,1)");
    }
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw ParamError("prior params: kernel size must be odd and >= 1");
    }
    if (!(sigma > 0.0)) {
        throw ParamError("prior params: sigma must be > 0");
    }
    if (max_passes < 1) {
        throw ParamError("prior params: max passes must be >= 1");
    }
}

int PriorParams::resolve_capture_block(const ModelConfig& cfg) const {
    const int block = capture_block < 0 ? cfg.last_double_block() : capture_block;
    if (block >= cfg.total_blocks()) {
        throw ParamError("prior params: capture block out of range");
    }
    return block;
}

Grid2D attention_map(const AttentionCapture& capture, const std::vector<int>& token_set,
                     int grid_h, int grid_w) {
    if (token_set.empty()) {
        throw ParamError("attention_map: empty token set");
    }
    const int heads = static_cast<int>(capture.image_queries.size());
    if (heads == 0) {
        throw ParamError("attention_map: capture holds no heads");
    }
    const int s = capture.image_queries[0].rows;
    const int t = capture.text_keys[0].rows;
    if (s != grid_h * grid_w) {
        throw ShapeError("attention_map: capture token count does not match grid");
    }
    for (const int idx : token_set) {
        if (idx < 0 || idx >= t) {
            throw ParamError("attention_map: token index " + std::to_string(idx) + " out of range");
        }
    }

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(capture.head_dim));
    std::vector<double> acc(static_cast<std::size_t>(s), 0.0);
    for (int h = 0; h < heads; ++h) {
        const FeatureMatrix probs =
            row_softmax(scale(matmul_nt(capture.image_queries[h], capture.text_keys[h]), inv_sqrt_d));
        for (int p = 0; p < s; ++p) {
            double sum = 0.0;
            for (const int idx : token_set) {
                sum += probs.at(p, idx);
            }
            acc[static_cast<std::size_t>(p)] += sum;
        }
    }
    Grid2D map(grid_h, grid_w);
    for (int p = 0; p < s; ++p) {
        map.data[static_cast<std::size_t>(p)] = acc[static_cast<std::size_t>(p)] / heads;
    }
    return renorm(map);
}

namespace {

// Super-threshold component count at the tau quantile; an all-zero map has
// no foreground by definition.
int threshold_components(const Grid2D& m, double tau) {
    const bool all_zero = std::all_of(m.data.begin(), m.data.end(), [](double v) { return v == 0.0; });
    if (all_zero) {
        return 0;
    }
    const double thr = quantile(m, tau);
    BinaryPrior fg(m.height, m.width);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        fg.data[i] = m.data[i] >= thr ? 1 : 0;
    }
    return connected_components(fg, 8).count;
}

}  // namespace

Grid2D homogeneous_blob(const Grid2D& m, const PriorParams& params, BlobReport* report) {
    params.validate();
    const GaussianKernel kern = gaussian_kernel(params.kernel_size, params.sigma);

    Grid2D cur  = renorm(m);
    bool broke  = false;
    int passes  = 0;
    for (int p = 1; p <= params.max_passes; ++p) {
        cur    = renorm(conv2d_same(cur, kern));
        passes = p;
        if (threshold_components(cur, params.tau) <= 1) {
            broke = true;
            break;
        }
    }

    // single-pixel marker at the global peak (first maximum in row-major
    // order); its value equals the peak so marker <= mask holds everywhere
    std::size_t peak = 0;
    for (std::size_t i = 1; i < cur.data.size(); ++i) {
        if (cur.data[i] > cur.data[peak]) {
            peak = i;
        }
    }
    Grid2D marker(cur.height, cur.width);
    marker.data[peak] = cur.data[peak];

    Grid2D out = renorm(morph_reconstruct(marker, cur));
    if (report) {
        report->passes_used = passes;
        report->exhausted   = !broke;
        report->components  = threshold_components(out, params.tau);
    }
    return out;
}

BinaryPrior binarize(const Grid2D& m, double tau) {
    BinaryPrior out(m.height, m.width);
    const bool all_zero = std::all_of(m.data.begin(), m.data.end(), [](double v) { return v == 0.0; });
    if (all_zero) {
        return out;
    }
    const double thr = quantile(m, tau);
    for (std::size_t i = 0; i < m.data.size(); ++i) {
        out.data[i] = m.data[i] >= thr ? 1 : 0;
    }
    return out;
}

std::vector<BinaryPrior> argmax_partition(const std::vector<Grid2D>& maps) {
    if (maps.empty()) {
        throw ParamError("argmax_partition: need at least one map");
    }
    const int h = maps[0].height;
    const int w = maps[0].width;
    for (const auto& m : maps) {
        if (m.height != h || m.width != w) {
            throw ShapeError("argmax_partition: map shapes differ");
        }
    }
    std::vector<BinaryPrior> priors(maps.size(), BinaryPrior(h, w));
    for (std::size_t u = 0; u < maps.size(); ++u) {
        priors[u].subject = static_cast<int>(u);
    }
    const int cells = h * w;
    for (int i = 0; i < cells; ++i) {
        std::size_t winner = 0;
        double best        = maps[0].data[static_cast<std::size_t>(i)];
        for (std::size_t u = 1; u < maps.size(); ++u) {
            const double v = maps[u].data[static_cast<std::size_t>(i)];
            if (v > best) {  // ties keep the lowest subject index
                best   = v;
                winner = u;
            }
        }
        priors[winner].data[static_cast<std::size_t>(i)] = 1;
    }
    return priors;
}

PriorExtraction extract_priors(const Model& model, const FeatureMatrix& prompt,
                               const std::vector<SubjectSpec>& subjects, const PriorParams& params,
                               int steps, const FeatureMatrix& z1) {
    params.validate();
    if (subjects.empty()) {
        throw ParamError("extract_priors: no subjects given");
    }
    if (steps < 1) {
        throw ParamError("extract_priors: steps must be >= 1");
    }
    const ModelConfig& cfg = model.config();
    for (const auto& sub : subjects) {
        if (sub.token_indices.empty()) {
            throw ParamError("extract_priors: subject '" + sub.name + "' names no prompt tokens");
        }
        for (const int idx : sub.token_indices) {
            if (idx < 0 || idx >= cfg.prompt_tokens) {
                throw ParamError("extract_priors: token index out of range for subject '" + sub.name + "'");
            }
        }
    }
    const int capture_block = params.resolve_capture_block(cfg);

    // walk the grid until the first time at or below gamma
    const double dt  = 1.0 / steps;
    int capture_step = steps - 1;
    for (int i = 0; i < steps; ++i) {
        if (1.0 - i * dt <= params.gamma) {
            capture_step = i;
            break;
        }
    }

    FeatureMatrix z = z1;
    for (int i = 0; i < capture_step; ++i) {
        const double t = 1.0 - i * dt;
        z = sub(z, scale(model.velocity(z, t, prompt), dt));
    }
    const double capture_time = 1.0 - capture_step * dt;

    TokenState state;
    state.text  = prompt;
    state.image = z;
    state.temb  = model.time_embedding(capture_time);
    TapRequest taps;
    taps.capture_blocks = {capture_block};
    const ForwardResult fwd = model.forward_pass(state, taps);
    if (fwd.captures.empty()) {
        throw Error("extract_priors: capture block produced no attention capture");
    }
    const AttentionCapture& cap = fwd.captures.front();

    PriorExtraction out;
    out.capture_time  = capture_time;
    out.capture_block = capture_block;
    out.forwards_used = capture_step + 1;
    out.attention_maps.reserve(subjects.size());
    out.blobs.reserve(subjects.size());
    out.blob_reports.resize(subjects.size());
    for (std::size_t u = 0; u < subjects.size(); ++u) {
        out.attention_maps.push_back(attention_map(cap, subjects[u].token_indices, cfg.grid_h, cfg.grid_w));
        out.blobs.push_back(homogeneous_blob(out.attention_maps.back(), params, &out.blob_reports[u]));
    }

    out.onehot = argmax_partition(out.blobs);
    out.priors = out.onehot;
    for (std::size_t u = 0; u < subjects.size(); ++u) {
        const BinaryPrior claimed = binarize(out.blobs[u], params.tau);
        for (std::size_t i = 0; i < out.priors[u].data.size(); ++i) {
            out.priors[u].data[i] = out.priors[u].data[i] & claimed.data[i];
        }
        out.priors[u].subject = static_cast<int>(u);
    }
    return out;
}

PriorExtraction extract_priors(const Model& model, const FeatureMatrix& prompt,
                               const std::vector<SubjectSpec>& subjects, const PriorParams& params,
                               int steps, std::uint64_t noise_seed) {
    return extract_priors(model, prompt, subjects, params, steps, seeded_noise(model.config(), noise_seed));
}

}  // namespace lorablend
