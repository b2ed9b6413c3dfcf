#include "lorablend/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <utility>

#include "lorablend/io.hpp"
#include "lorablend/rng.hpp"

namespace lorablend {

namespace {

constexpr double kTwoPi   = 6.283185307179586476925287;
constexpr double kNormEps = 1e-8;

// y = x * W^T with W stored out x in.
FeatureMatrix linear(const FeatureMatrix& x, const FeatureMatrix& w) {
    return matmul_nt(x, w);
}

FeatureMatrix rmsnorm_rows(const FeatureMatrix& x, const FeatureMatrix& scale1c) {
    FeatureMatrix out(x.rows, x.cols);
    for (int r = 0; r < x.rows; ++r) {
        double ms = 0.0;
        for (int c = 0; c < x.cols; ++c) {
            ms += x.at(r, c) * x.at(r, c);
        }
        const double inv = 1.0 / std::sqrt(ms / x.cols + kNormEps);
        for (int c = 0; c < x.cols; ++c) {
            out.at(r, c) = x.at(r, c) * inv * scale1c.at(0, c);
        }
    }
    return out;
}

FeatureMatrix silu(const FeatureMatrix& x) {
    FeatureMatrix out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double v = x.data[i];
        out.data[i]    = v / (1.0 + std::exp(-v));
    }
    return out;
}

FeatureMatrix vstack(const FeatureMatrix& a, const FeatureMatrix& b) {
    FeatureMatrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

FeatureMatrix take_rows(const FeatureMatrix& m, int r0, int r1) {
    FeatureMatrix out(r1 - r0, m.cols);
    std::copy(m.data.begin() + static_cast<std::ptrdiff_t>(r0) * m.cols,
              m.data.begin() + static_cast<std::ptrdiff_t>(r1) * m.cols, out.data.begin());
    return out;
}

FeatureMatrix take_cols(const FeatureMatrix& m, int c0, int c1) {
    FeatureMatrix out(m.rows, c1 - c0);
    for (int r = 0; r < m.rows; ++r) {
        for (int c = c0; c < c1; ++c) {
            out.at(r, c - c0) = m.at(r, c);
        }
    }
    return out;
}

void put_cols(FeatureMatrix& dst, const FeatureMatrix& src, int c0) {
    for (int r = 0; r < src.rows; ++r) {
        for (int c = 0; c < src.cols; ++c) {
            dst.at(r, c0 + c) = src.at(r, c);
        }
    }
}

// Multi-head attention over one joint sequence. q/k/v are L x C; heads are
// column slices of width d. Returns the L x C concatenation of head outputs.
FeatureMatrix attention_core(const FeatureMatrix& q, const FeatureMatrix& k, const FeatureMatrix& v,
                             int heads, int d) {
    FeatureMatrix out(q.rows, heads * d);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int h = 0; h < heads; ++h) {
        const FeatureMatrix qh = take_cols(q, h * d, (h + 1) * d);
        const FeatureMatrix kh = take_cols(k, h * d, (h + 1) * d);
        const FeatureMatrix vh = take_cols(v, h * d, (h + 1) * d);
        const FeatureMatrix probs = row_softmax(scale(matmul_nt(qh, kh), inv_sqrt_d));
        put_cols(out, matmul(probs, vh), h * d);
    }
    return out;
}

void capture_heads(AttentionCapture& cap, const FeatureMatrix& q_image, const FeatureMatrix& k_text,
                   int heads, int d) {
    cap.head_dim = d;
    cap.image_queries.reserve(heads);
    cap.text_keys.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        cap.image_queries.push_back(take_cols(q_image, h * d, (h + 1) * d));
        cap.text_keys.push_back(take_cols(k_text, h * d, (h + 1) * d));
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (channels != heads * head_dim) {
        throw ParamError("model config: channels must equal heads * head_dim");
    }
    if (heads < 1 || head_dim < 1) {
        throw ParamError("model config: heads and head_dim must be >= 1");
    }
    if (grid_h < 2 || grid_w < 2) {
        throw ParamError("model config: grid must be at least 2x2");
    }
    if (prompt_tokens < 1) {
        throw ParamError("model config: prompt_tokens must be >= 1");
    }
    if (double_blocks < 1) {
        throw ParamError("model config: at least one double-stream block required");
    }
    if (single_blocks < 0) {
        throw ParamError("model config: single_blocks must be >= 0");
    }
}

namespace {

FeatureMatrix sincos_text_features(int tokens, int channels) {
    FeatureMatrix f(tokens, channels);
    for (int i = 0; i < tokens; ++i) {
        const double u = static_cast<double>(i) / tokens;
        for (int c = 0; c < channels; ++c) {
            const double freq  = static_cast<double>(c / 2 + 1);
            const double phase = (c % 2 == 0) ? 0.0 : kTwoPi / 4.0;
            f.at(i, c)         = std::sin(kTwoPi * freq * u + phase);
        }
    }
    return f;
}

FeatureMatrix sincos_image_features(int h, int w, int channels) {
    FeatureMatrix f(h * w, channels);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int token = y * w + x;
            const double ux = static_cast<double>(x) / w;
            const double uy = static_cast<double>(y) / h;
            for (int c = 0; c < channels; ++c) {
                const double freq  = static_cast<double>(c / 4 + 1);
                const double u     = (c % 4 < 2) ? ux : uy;
                const double phase = (c % 2 == 0) ? 0.0 : kTwoPi / 4.0;
                f.at(token, c)     = std::sin(kTwoPi * freq * u + phase);
            }
        }
    }
    return f;
}

}  // namespace

Model::Model(const ModelConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const int c  = cfg_.channels;
    const int hd = 2 * c;

    auto mat = [](int r, int cc) { return FeatureMatrix(r, cc); };
    pos_text_w_  = mat(c, c);
    pos_image_w_ = mat(c, c);
    time_w_      = mat(c, c);

    auto make_stream = [&] {
        StreamWeights s;
        s.norm_attn = mat(1, c);
        s.wq        = mat(c, c);
        s.wk        = mat(c, c);
        s.wv        = mat(c, c);
        s.wo        = mat(c, c);
        s.norm_mlp  = mat(1, c);
        s.mlp_w1    = mat(hd, c);
        s.mlp_w2    = mat(c, hd);
        return s;
    };
    dbl_.resize(cfg_.double_blocks);
    for (auto& b : dbl_) {
        b.text  = make_stream();
        b.image = make_stream();
    }
    sgl_.resize(cfg_.single_blocks);
    for (auto& s : sgl_) {
        s = make_stream();
    }
    head_norm_ = mat(1, c);
    head_w_    = mat(c, c);

    pos_feat_text_  = sincos_text_features(cfg_.prompt_tokens, c);
    pos_feat_image_ = sincos_image_features(cfg_.grid_h, cfg_.grid_w, c);
}

void Model::for_each_tensor(const std::function<void(const std::string&, FeatureMatrix&)>& fn) {
    fn("embed.pos_text.w", pos_text_w_);
    fn("embed.pos_image.w", pos_image_w_);
    fn("embed.time.w", time_w_);
    auto stream_tensors = [&](const std::string& prefix, StreamWeights& s) {
        fn(prefix + ".norm_attn.scale", s.norm_attn);
        fn(prefix + ".attn.wq", s.wq);
        fn(prefix + ".attn.wk", s.wk);
        fn(prefix + ".attn.wv", s.wv);
        fn(prefix + ".attn.wo", s.wo);
        fn(prefix + ".norm_mlp.scale", s.norm_mlp);
        fn(prefix + ".mlp.w1", s.mlp_w1);
        fn(prefix + ".mlp.w2", s.mlp_w2);
    };
    for (int i = 0; i < cfg_.double_blocks; ++i) {
        const std::string base = "blocks.double." + std::to_string(i);
        stream_tensors(base + ".text", dbl_[i].text);
        stream_tensors(base + ".image", dbl_[i].image);
    }
    for (int g = 0; g < cfg_.single_blocks; ++g) {
        stream_tensors("blocks.single." + std::to_string(g), sgl_[g]);
    }
    fn("head.norm.scale", head_norm_);
    fn("head.proj.w", head_w_);
}

void Model::for_each_tensor(const std::function<void(const std::string&, const FeatureMatrix&)>& fn) const {
    const_cast<Model*>(this)->for_each_tensor(
        [&](const std::string& name, FeatureMatrix& m) { fn(name, m); });
}

FeatureMatrix* Model::find_tensor(const std::string& name) {
    FeatureMatrix* found = nullptr;
    for_each_tensor([&](const std::string& n, FeatureMatrix& m) {
        if (n == name) {
            found = &m;
        }
    });
    return found;
}

const FeatureMatrix* Model::find_tensor(const std::string& name) const {
    return const_cast<Model*>(this)->find_tensor(name);
}

std::uint64_t Model::weight_checksum() const {
    std::uint64_t h = 1469598103934665603ull;
    for_each_tensor([&](const std::string& name, const FeatureMatrix& m) {
        h = fnv1a(reinterpret_cast<const std::uint8_t*>(name.data()), name.size()) ^ (h * 1099511628211ull);
        h ^= fnv1a(reinterpret_cast<const std::uint8_t*>(m.data.data()), m.data.size() * sizeof(double));
    });
    return h;
}

Model Model::init(const ModelConfig& cfg) {
    Model model(cfg);
    model.for_each_tensor([&](const std::string& name, FeatureMatrix& m) {
        if (name.find("norm") != std::string::npos) {
            std::fill(m.data.begin(), m.data.end(), 1.0);
            return;
        }
        SeededRng rng(SeededRng::stream_seed(cfg.seed, name));
        const double sd = 1.0 / std::sqrt(static_cast<double>(m.cols));
        for (double& v : m.data) {
            v = rng.normal() * sd;
        }
    });
    return model;
}

TokenState Model::embed_inputs(const TokenState& state) const {
    if (state.text.rows != cfg_.prompt_tokens || state.text.cols != cfg_.channels ||
        state.image.rows != cfg_.image_tokens() || state.image.cols != cfg_.channels) {
        throw ShapeError("embed_inputs: token state does not match model config");
    }
    TokenState out;
    out.temb  = state.temb;
    out.text  = add(state.text, linear(pos_feat_text_, pos_text_w_));
    out.image = add(state.image, linear(pos_feat_image_, pos_image_w_));
    if (!state.temb.empty()) {
        if (static_cast<int>(state.temb.size()) != cfg_.channels) {
            throw ShapeError("embed_inputs: temb length does not match channels");
        }
        for (int r = 0; r < out.text.rows; ++r) {
            for (int c = 0; c < cfg_.channels; ++c) {
                out.text.at(r, c) += state.temb[c];
            }
        }
        for (int r = 0; r < out.image.rows; ++r) {
            for (int c = 0; c < cfg_.channels; ++c) {
                out.image.at(r, c) += state.temb[c];
            }
        }
    }
    return out;
}

SublayerOut Model::attention_double(const DoubleBlockWeights& w, const FeatureMatrix& text,
                                    const FeatureMatrix& image, int block, AttentionCapture* capture) const {
    const FeatureMatrix nt = rmsnorm_rows(text, w.text.norm_attn);
    const FeatureMatrix ni = rmsnorm_rows(image, w.image.norm_attn);
    const FeatureMatrix qt = linear(nt, w.text.wq);
    const FeatureMatrix kt = linear(nt, w.text.wk);
    const FeatureMatrix vt = linear(nt, w.text.wv);
    const FeatureMatrix qi = linear(ni, w.image.wq);
    const FeatureMatrix ki = linear(ni, w.image.wk);
    const FeatureMatrix vi = linear(ni, w.image.wv);
    if (capture) {
        capture->block = block;
        capture_heads(*capture, qi, kt, cfg_.heads, cfg_.head_dim);
    }
    const FeatureMatrix joint =
        attention_core(vstack(qt, qi), vstack(kt, ki), vstack(vt, vi), cfg_.heads, cfg_.head_dim);
    SublayerOut out;
    out.text  = linear(take_rows(joint, 0, text.rows), w.text.wo);
    out.image = linear(take_rows(joint, text.rows, joint.rows), w.image.wo);
    return out;
}

SublayerOut Model::attention_single(const StreamWeights& w, const FeatureMatrix& text,
                                    const FeatureMatrix& image, int block, AttentionCapture* capture) const {
    const FeatureMatrix cat = vstack(text, image);
    const FeatureMatrix n   = rmsnorm_rows(cat, w.norm_attn);
    const FeatureMatrix q   = linear(n, w.wq);
    const FeatureMatrix k   = linear(n, w.wk);
    const FeatureMatrix v   = linear(n, w.wv);
    if (capture) {
        capture->block = block;
        capture_heads(*capture, take_rows(q, text.rows, q.rows), take_rows(k, 0, text.rows),
                      cfg_.heads, cfg_.head_dim);
    }
    const FeatureMatrix joint = attention_core(q, k, v, cfg_.heads, cfg_.head_dim);
    const FeatureMatrix o     = linear(joint, w.wo);
    SublayerOut out;
    out.text  = take_rows(o, 0, text.rows);
    out.image = take_rows(o, text.rows, o.rows);
    return out;
}

namespace {

FeatureMatrix stream_mlp(const FeatureMatrix& x, const FeatureMatrix& norm, const FeatureMatrix& w1,
                         const FeatureMatrix& w2) {
    return linear(silu(linear(rmsnorm_rows(x, norm), w1)), w2);
}

}  // namespace

SublayerOut Model::sublayer_eval(int block, int sublayer, const FeatureMatrix& text,
                                 const FeatureMatrix& image, AttentionCapture* capture) const {
    if (block < 0 || block >= cfg_.total_blocks()) {
        throw ParamError("sublayer_eval: block index out of range");
    }
    if (sublayer != 1 && sublayer != 2) {
        throw ParamError("sublayer_eval: sublayer must be 1 (attention) or 2 (MLP)");
    }
    if (block < cfg_.double_blocks) {
        const DoubleBlockWeights& w = dbl_[block];
        if (sublayer == 1) {
            return attention_double(w, text, image, block, capture);
        }
        SublayerOut out;
        out.text  = stream_mlp(text, w.text.norm_mlp, w.text.mlp_w1, w.text.mlp_w2);
        out.image = stream_mlp(image, w.image.norm_mlp, w.image.mlp_w1, w.image.mlp_w2);
        return out;
    }
    const StreamWeights& w = sgl_[block - cfg_.double_blocks];
    if (sublayer == 1) {
        return attention_single(w, text, image, block, capture);
    }
    const FeatureMatrix cat = vstack(text, image);
    const FeatureMatrix m   = stream_mlp(cat, w.norm_mlp, w.mlp_w1, w.mlp_w2);
    SublayerOut out;
    out.text  = take_rows(m, 0, text.rows);
    out.image = take_rows(m, text.rows, m.rows);
    return out;
}

ForwardResult Model::forward_multi(const std::vector<const Model*>& models, const TokenState& state,
                                   const TapRequest& taps, const MultiCombine& combine) {
    if (models.empty()) {
        throw ParamError("forward_multi: at least one model required");
    }
    const Model& base = *models[0];
    for (const Model* m : models) {
        if (!(m->cfg_ == base.cfg_)) {
            throw ShapeError("forward_multi: all models must share one config");
        }
    }

    ForwardResult result;
    TokenState prepared = base.embed_inputs(state);
    FeatureMatrix txt   = std::move(prepared.text);
    FeatureMatrix img   = std::move(prepared.image);

    auto wants_capture = [&](int block) {
        for (const int b : taps.capture_blocks) {
            if (b == block) {
                return true;
            }
        }
        return false;
    };

    std::vector<FeatureMatrix> adapter_vals(models.size() - 1);
    for (int block = 0; block < base.cfg_.total_blocks(); ++block) {
        for (int sub = 1; sub <= 2; ++sub) {
            AttentionCapture cap;
            AttentionCapture* cap_ptr = (sub == 1 && wants_capture(block)) ? &cap : nullptr;

            std::vector<SublayerOut> outs(models.size());
            for (std::size_t m = 0; m < models.size(); ++m) {
                outs[m] = models[m]->sublayer_eval(block, sub, txt, img, m == 0 ? cap_ptr : nullptr);
            }
            if (cap_ptr) {
                result.captures.push_back(std::move(cap));
            }

            for (const Stream stream : {Stream::Text, Stream::Image}) {
                ResidualRecord rec;
                rec.block    = block;
                rec.sublayer = sub;
                rec.stream   = stream;
                rec.values   = stream == Stream::Text ? std::move(outs[0].text) : std::move(outs[0].image);
                for (std::size_t a = 0; a + 1 < models.size(); ++a) {
                    adapter_vals[a] =
                        stream == Stream::Text ? std::move(outs[a + 1].text) : std::move(outs[a + 1].image);
                }
                FeatureMatrix added = combine ? combine(rec, adapter_vals) : std::move(rec.values);
                add_inplace(stream == Stream::Text ? txt : img, added);
                if (taps.residuals) {
                    rec.values = std::move(added);
                    result.records.push_back(std::move(rec));
                }
            }
        }
    }

    ensure_finite(txt.data, "forward text stream");
    ensure_finite(img.data, "forward image stream");
    result.state.text  = std::move(txt);
    result.state.image = std::move(img);
    result.state.temb  = state.temb;
    return result;
}

ForwardResult Model::forward_pass(const TokenState& state, const TapRequest& taps,
                                  const ResidualHook& hook) const {
    MultiCombine combine;
    if (hook) {
        combine = [&hook](const ResidualRecord& base, const std::vector<FeatureMatrix>&) {
            ResidualRecord tmp = base;
            hook(tmp);
            return std::move(tmp.values);
        };
    }
    return forward_multi({this}, state, taps, combine);
}

std::vector<double> Model::time_embedding(double t) const {
    const int c = cfg_.channels;
    FeatureMatrix feat(1, c);
    for (int i = 0; i < c; ++i) {
        const double freq  = static_cast<double>(i / 2 + 1);
        const double phase = (i % 2 == 0) ? 0.0 : kTwoPi / 4.0;
        feat.at(0, i)      = std::sin(kTwoPi * freq * t + phase);
    }
    const FeatureMatrix emb = linear(feat, time_w_);
    return emb.data;
}

FeatureMatrix Model::velocity_head(const FeatureMatrix& image_out) const {
    return linear(rmsnorm_rows(image_out, head_norm_), head_w_);
}

FeatureMatrix Model::velocity(const FeatureMatrix& z, double t, const FeatureMatrix& prompt) const {
    if (!(t >= 0.0 && t <= 1.0)) {
        throw ParamError("velocity: t must be in [0,1], got " + std::to_string(t));
    }
    TokenState state;
    state.text  = prompt;
    state.image = z;
    state.temb  = time_embedding(t);
    ForwardResult fwd = forward_pass(state, TapRequest{});
    return velocity_head(fwd.state.image);
}

FeatureMatrix Model::flow_denoise(const FeatureMatrix& z1, int steps, const FeatureMatrix& prompt,
                                  const StepHook& hook) const {
    if (steps < 1) {
        throw ParamError("flow_denoise: steps must be >= 1");
    }
    const double dt = 1.0 / steps;
    FeatureMatrix z = z1;
    for (int i = 0; i < steps; ++i) {
        const double t = 1.0 - i * dt;
        TokenState state;
        state.text  = prompt;
        state.image = z;
        state.temb  = time_embedding(t);
        ResidualHook rec_hook;
        if (hook) {
            rec_hook = [&hook, i, t](ResidualRecord& rec) { hook(i, t, rec); };
        }
        ForwardResult fwd = forward_pass(state, TapRequest{}, rec_hook);
        const FeatureMatrix v = velocity_head(fwd.state.image);
        z = sub(z, scale(v, dt));
    }
    return z;
}

FeatureMatrix Model::flow_invert(const FeatureMatrix& z0, int steps, const FeatureMatrix& prompt) const {
    if (steps < 1) {
        throw ParamError("flow_invert: steps must be >= 1");
    }
    const double dt = 1.0 / steps;
    FeatureMatrix z = z0;
    for (int i = 0; i < steps; ++i) {
        const double t = i * dt;
        z = add(z, scale(velocity(z, t, prompt), dt));
    }
    return z;
}

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
const char kCheckpointMagic[4] = {'M', 'D', 'I', 'T'};

}  // namespace

void Model::save(const std::string& path) const {
    ByteWriter bw;
    bw.bytes(kCheckpointMagic, 4);
    bw.u32(kCheckpointVersion);
    bw.u32(static_cast<std::uint32_t>(cfg_.channels));
    bw.u32(static_cast<std::uint32_t>(cfg_.grid_h));
    bw.u32(static_cast<std::uint32_t>(cfg_.grid_w));
    bw.u32(static_cast<std::uint32_t>(cfg_.prompt_tokens));
    bw.u32(static_cast<std::uint32_t>(cfg_.heads));
    bw.u32(static_cast<std::uint32_t>(cfg_.head_dim));
    bw.u32(static_cast<std::uint32_t>(cfg_.double_blocks));
    bw.u32(static_cast<std::uint32_t>(cfg_.single_blocks));
    bw.u64(cfg_.seed);
    for_each_tensor([&](const std::string&, const FeatureMatrix& m) {
        for (const double v : m.data) {
            bw.f64(v);
        }
    });
    bw.save(path);
}

Model Model::load(const std::string& path) {
    ByteReader br = ByteReader::from_file(path);
    char magic[4];
    br.raw(magic, 4, "magic");
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0) {
        throw FormatError("bad checkpoint magic, expected MDIT", 0);
    }
    const std::uint32_t version = br.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version), 4);
    }
    ModelConfig cfg;
    cfg.channels      = static_cast<int>(br.u32());
    cfg.grid_h        = static_cast<int>(br.u32());
    cfg.grid_w        = static_cast<int>(br.u32());
    cfg.prompt_tokens = static_cast<int>(br.u32());
    cfg.heads         = static_cast<int>(br.u32());
    cfg.head_dim      = static_cast<int>(br.u32());
    cfg.double_blocks = static_cast<int>(br.u32());
    cfg.single_blocks = static_cast<int>(br.u32());
    cfg.seed          = br.u64();
    try {
        cfg.validate();
    } catch (const ParamError& e) {
        throw FormatError(std::string("invalid config block: ") + e.what(), 8);
    }
    Model model(cfg);
    model.for_each_tensor([&](const std::string& name, FeatureMatrix& m) {
        for (double& v : m.data) {
            try {
                v = br.f64();
            } catch (const FormatError&) {
                throw FormatError("truncated weight array " + name, br.offset());
            }
        }
    });
    if (!br.at_end()) {
        throw FormatError("trailing bytes after weight arrays", br.offset());
    }
    return model;
}

FeatureMatrix seeded_prompt(const ModelConfig& cfg, std::uint64_t seed) {
    SeededRng rng(SeededRng::stream_seed(seed, "prompt"));
    FeatureMatrix m(cfg.prompt_tokens, cfg.channels);
    for (double& v : m.data) {
        v = rng.normal();
    }
    return m;
}

FeatureMatrix seeded_noise(const ModelConfig& cfg, std::uint64_t seed) {
    SeededRng rng(SeededRng::stream_seed(seed, "noise"));
    FeatureMatrix m(cfg.image_tokens(), cfg.channels);
    for (double& v : m.data) {
        v = rng.normal();
    }
    return m;
}

}  // namespace lorablend
