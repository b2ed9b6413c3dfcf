#include "lorablend/blend.hpp"

#include <algorithm>
#include <cmath>

#include "lorablend/io.hpp"

namespace lorablend {

void BlendConfig::validate() const {
    if (!(gate_t >= 0.0 && gate_t <= 1.0)) {
        throw ParamError("blend config: gate timestep must be in [0,1]");
    }
    if (!(epsilon > 0.0)) {
        throw ParamError("blend config: epsilon must be > 0");
    }
}

BlendWeights alpha_weights(const std::vector<BinaryPrior>& priors, double epsilon) {
    if (priors.empty()) {
        throw ParamError("alpha_weights: need at least one prior");
    }
    if (!(epsilon > 0.0)) {
        throw ParamError("alpha_weights: epsilon must be > 0");
    }
    const int cells = priors[0].cells();
    for (const auto& p : priors) {
        if (p.cells() != cells || p.height != priors[0].height) {
            throw ShapeError("alpha_weights: priors differ in shape");
        }
    }
    BlendWeights w;
    w.tokens   = cells;
    w.subjects = static_cast<int>(priors.size());
    w.epsilon  = epsilon;
    w.alpha.resize(static_cast<std::size_t>(cells) * priors.size());
    w.claims.resize(static_cast<std::size_t>(cells));
    for (int p = 0; p < cells; ++p) {
        int claims = 0;
        for (const auto& prior : priors) {
            claims += prior.data[static_cast<std::size_t>(p)];
        }
        w.claims[static_cast<std::size_t>(p)] = claims;
        const double denom = static_cast<double>(claims) + epsilon;
        for (std::size_t k = 0; k < priors.size(); ++k) {
            w.alpha[static_cast<std::size_t>(p) * priors.size() + k] =
                static_cast<double>(priors[k].data[static_cast<std::size_t>(p)]) / denom;
        }
    }
    return w;
}

ResidualRecord blend_residual(const ResidualRecord& base, const std::vector<ResidualRecord>& adapters,
                              const BlendWeights& weights, const BlendConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(adapters.size()) != weights.subjects) {
        throw ContractError("blend_residual: adapter count does not match weights");
    }
    for (const auto& a : adapters) {
        if (a.block != base.block || a.sublayer != base.sublayer || a.stream != base.stream) {
            throw ContractError("blend_residual: records do not share (block, sublayer, stream)");
        }
        if (!a.values.same_shape(base.values)) {
            throw ShapeError("blend_residual: record shapes differ");
        }
    }

    ResidualRecord out;
    out.block    = base.block;
    out.sublayer = base.sublayer;
    out.stream   = base.stream;

    if (base.stream == Stream::Text) {  // prompt tokens: no blending
        out.values = base.values;
        return out;
    }
    if (base.values.rows != weights.tokens) {
        throw ShapeError("blend_residual: image record rows do not match prior cells");
    }

    out.values = FeatureMatrix(base.values.rows, base.values.cols);
    const int n = weights.subjects;
    for (int p = 0; p < base.values.rows; ++p) {
        if (weights.claims[static_cast<std::size_t>(p)] == 0) {  // background token
            for (int c = 0; c < base.values.cols; ++c) {
                out.values.at(p, c) = base.values.at(p, c);
            }
            continue;
        }
        for (int c = 0; c < base.values.cols; ++c) {
            double acc = 0.0;
            for (int k = 0; k < n; ++k) {
                acc += weights.alpha_at(p, k) * adapters[static_cast<std::size_t>(k)].values.at(p, c);
            }
            out.values.at(p, c) = acc;
        }
    }
    return out;
}

FeatureMatrix blended_denoise(const Model& model, const std::vector<AdapterBundle>& bundles,
                              const std::vector<BinaryPrior>& priors, const FeatureMatrix& z1,
                              int steps, const FeatureMatrix& prompt, const BlendConfig& cfg,
                              BlendTrace* trace, const BlendObserver& observer) {
    cfg.validate();
    if (bundles.empty()) {
        throw ParamError("blended_denoise: need at least one adapter bundle");
    }
    if (bundles.size() != priors.size()) {
        throw ParamError("blended_denoise: bundle and prior counts differ");
    }
    if (steps < 1) {
        throw ParamError("blended_denoise: steps must be >= 1");
    }
    const ModelConfig& mcfg = model.config();
    for (const auto& p : priors) {
        if (p.height != mcfg.grid_h || p.width != mcfg.grid_w) {
            throw ShapeError("blended_denoise: prior shape does not match the latent grid");
        }
    }

    const int n = static_cast<int>(bundles.size());
    std::vector<Model> merged;
    merged.reserve(bundles.size());
    for (const auto& b : bundles) {
        merged.push_back(merged_model(model, b));
    }
    std::vector<const Model*> models;
    models.push_back(&model);
    for (const auto& m : merged) {
        models.push_back(&m);
    }

    const BlendWeights weights = alpha_weights(priors, cfg.epsilon);

    if (trace) {
        trace->per_adapter_forwards.assign(bundles.size(), 0);
        trace->claimed_tokens.assign(bundles.size(), 0);
        for (std::size_t k = 0; k < priors.size(); ++k) {
            int claimed = 0;
            for (const auto v : priors[k].data) {
                claimed += v;
            }
            trace->claimed_tokens[k] = claimed;
        }
    }

    const double dt = 1.0 / steps;
    FeatureMatrix z = z1;
    for (int i = 0; i < steps; ++i) {
        const double t    = 1.0 - i * dt;
        const bool gated  = t <= cfg.gate_t;
        FeatureMatrix v;
        if (!gated) {
            v = model.velocity(z, t, prompt);
            if (trace) {
                ++trace->base_forwards;
            }
        } else {
            TokenState state;
            state.text  = prompt;
            state.image = z;
            state.temb  = model.time_embedding(t);
            MultiCombine combine = [&](const ResidualRecord& base,
                                       const std::vector<FeatureMatrix>& adapter_vals) {
                std::vector<ResidualRecord> adapter_recs(adapter_vals.size());
                for (std::size_t k = 0; k < adapter_vals.size(); ++k) {
                    adapter_recs[k].block    = base.block;
                    adapter_recs[k].sublayer = base.sublayer;
                    adapter_recs[k].stream   = base.stream;
                    adapter_recs[k].values   = adapter_vals[k];
                }
                ResidualRecord blended = blend_residual(base, adapter_recs, weights, cfg);
                if (trace) {
                    if (base.stream == Stream::Text) {
                        trace->prompt_rows_base_identical &= blended.values.data == base.values.data;
                    } else {
                        for (int p = 0; p < blended.values.rows; ++p) {
                            if (weights.claims[static_cast<std::size_t>(p)] != 0) {
                                continue;
                            }
                            for (int c = 0; c < blended.values.cols; ++c) {
                                trace->unclaimed_rows_base_identical &=
                                    blended.values.at(p, c) == base.values.at(p, c);
                            }
                        }
                    }
                }
                if (observer) {
                    observer(i, t, base, adapter_vals, blended.values);
                }
                return std::move(blended.values);
            };
            const ForwardResult out = Model::forward_multi(models, state, TapRequest{}, combine);
            v = model.velocity_head(out.state.image);
            if (trace) {
                ++trace->base_forwards;
                trace->adapter_forwards += n;
                for (auto& c : trace->per_adapter_forwards) {
                    ++c;
                }
            }
        }
        if (trace) {
            trace->steps.push_back({i, t, gated});
        }
        z = sub(z, scale(v, dt));
    }

    if (trace) {
        trace->final_checksum =
            fnv1a(reinterpret_cast<const std::uint8_t*>(z.data.data()), z.data.size() * sizeof(double));
    }
    return z;
}

EditResult edit_image(const Model& model, const std::vector<AdapterBundle>& bundles,
                      const std::vector<SubjectSpec>& subjects, const FeatureMatrix& z0_input,
                      int steps, const PriorParams& pparams, const BlendConfig& cfg,
                      const FeatureMatrix& prompt) {
    if (bundles.size() != subjects.size()) {
        throw ParamError("edit_image: bundle and subject counts differ");
    }
    EditResult result;
    result.recovered_noise = model.flow_invert(z0_input, steps, prompt);
    result.extraction = extract_priors(model, prompt, subjects, pparams, steps, result.recovered_noise);
    result.latent = blended_denoise(model, bundles, result.extraction.priors, result.recovered_noise,
                                    steps, prompt, cfg, &result.trace);
    return result;
}

}  // namespace lorablend
