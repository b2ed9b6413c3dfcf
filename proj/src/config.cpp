#include "lorablend/config.hpp"

#include <filesystem>
#include <fstream>

namespace lorablend {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void schema_error(const std::string& msg) {
    throw FormatError("config: " + msg, 0);
}

template <typename T>
T get_or(const ordered_json& j, const char* key, T fallback) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
        schema_error(std::string("field '") + key + "' has the wrong type");
    }
}

std::string resolve(const fs::path& base, const std::string& p) {
    const fs::path path(p);
    return path.is_absolute() ? path.string() : (base / path).lexically_normal().string();
}

}  // namespace

void PipelineConfig::validate() const {
    model.validate();
    prior.validate();
    blend.validate();
    if (steps < 1) {
        throw ParamError("config: steps must be >= 1");
    }
    if (subjects.empty()) {
        throw ParamError("config: at least one subject required");
    }
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        for (std::size_t j = i + 1; j < subjects.size(); ++j) {
            if (subjects[i].name == subjects[j].name) {
                throw ParamError("config: duplicate subject name '" + subjects[i].name + "'");
            }
        }
    }
    for (const auto& s : subjects) {
        if (s.name.empty()) {
            throw ParamError("config: subject with empty name");
        }
        if (s.token_indices.empty()) {
            throw ParamError("config: subject '" + s.name + "' names no prompt tokens");
        }
        for (const int idx : s.token_indices) {
            if (idx < 0 || idx >= model.prompt_tokens) {
                throw ParamError("config: subject '" + s.name + "' token index out of range");
            }
        }
        if (s.adapter.empty()) {
            throw ParamError("config: subject '" + s.name + "' has no adapter path");
        }
    }
    if (out_dir.empty()) {
        throw ParamError("config: out_dir must not be empty");
    }
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open config file: " + path);
    }
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("config is not valid JSON: ") + e.what(), 0);
    }
    const fs::path base = fs::path(path).parent_path();

    PipelineConfig cfg;
    cfg.echo = j;

    if (j.contains("model")) {
        const auto& m         = j.at("model");
        cfg.model.channels    = get_or(m, "channels", cfg.model.channels);
        cfg.model.prompt_tokens = get_or(m, "prompt_tokens", cfg.model.prompt_tokens);
        cfg.model.heads       = get_or(m, "heads", cfg.model.heads);
        cfg.model.head_dim    = get_or(m, "head_dim", cfg.model.head_dim);
        cfg.model.double_blocks = get_or(m, "double_blocks", cfg.model.double_blocks);
        cfg.model.single_blocks = get_or(m, "single_blocks", cfg.model.single_blocks);
        cfg.model.seed        = get_or(m, "seed", cfg.model.seed);
        if (m.contains("grid")) {
            const auto& g = m.at("grid");
            if (!g.is_array() || g.size() != 2) {
                schema_error("model.grid must be [height, width]");
            }
            cfg.model.grid_h = g.at(0).get<int>();
            cfg.model.grid_w = g.at(1).get<int>();
        }
    }
    if (j.contains("checkpoint")) {
        cfg.checkpoint = resolve(base, j.at("checkpoint").get<std::string>());
        if (!fs::exists(*cfg.checkpoint)) {
            throw IoError("checkpoint file does not exist: " + *cfg.checkpoint);
        }
    }
    if (j.contains("params")) {
        const auto& p            = j.at("params");
        cfg.blend.gate_t         = get_or(p, "t", cfg.blend.gate_t);
        cfg.prior.gamma          = get_or(p, "gamma", cfg.prior.gamma);
        cfg.prior.tau            = get_or(p, "tau", cfg.prior.tau);
        cfg.prior.kernel_size    = get_or(p, "kernel_size", cfg.prior.kernel_size);
        cfg.prior.sigma          = get_or(p, "sigma", cfg.prior.sigma);
        cfg.prior.max_passes     = get_or(p, "max_passes", cfg.prior.max_passes);
        cfg.prior.capture_block  = get_or(p, "capture_block", cfg.prior.capture_block);
        cfg.blend.epsilon        = get_or(p, "epsilon", cfg.blend.epsilon);
    }
    cfg.steps = get_or(j, "steps", cfg.steps);
    if (j.contains("seeds")) {
        const auto& s   = j.at("seeds");
        cfg.noise_seed  = get_or(s, "noise", cfg.noise_seed);
        cfg.prompt_seed = get_or(s, "prompt", cfg.prompt_seed);
    }
    if (j.contains("subjects")) {
        if (!j.at("subjects").is_array()) {
            schema_error("subjects must be an array");
        }
        for (const auto& s : j.at("subjects")) {
            SubjectSpec spec;
            spec.name = get_or(s, "name", std::string{});
            if (s.contains("tokens")) {
                for (const auto& t : s.at("tokens")) {
                    spec.token_indices.push_back(t.get<int>());
                }
            }
            spec.adapter = get_or(s, "adapter", std::string{});
            if (!spec.adapter.empty()) {
                spec.adapter = resolve(base, spec.adapter);
            }
            cfg.subjects.push_back(std::move(spec));
        }
    }
    cfg.out_dir = get_or(j, "out_dir", cfg.out_dir);

    try {
        cfg.validate();
    } catch (const ParamError& e) {
        throw FormatError(std::string("config: ") + e.what(), 0);
    }
    for (const auto& s : cfg.subjects) {
        if (!fs::exists(s.adapter)) {
            throw IoError("adapter file does not exist: " + s.adapter);
        }
    }
    return cfg;
}

void apply_overrides(PipelineConfig& cfg, const ConfigOverrides& ov) {
    if (ov.seed) {
        cfg.noise_seed = *ov.seed;
        cfg.echo["seeds"]["noise"] = *ov.seed;
    }
    if (ov.steps) {
        cfg.steps = *ov.steps;
        cfg.echo["steps"] = *ov.steps;
    }
    if (ov.out_dir) {
        cfg.out_dir = *ov.out_dir;
        cfg.echo["out_dir"] = *ov.out_dir;
    }
    if (ov.gate_t) {
        cfg.blend.gate_t = *ov.gate_t;
        cfg.echo["params"]["t"] = *ov.gate_t;
    }
    if (ov.gamma) {
        cfg.prior.gamma = *ov.gamma;
        cfg.echo["params"]["gamma"] = *ov.gamma;
    }
    if (ov.tau) {
        cfg.prior.tau = *ov.tau;
        cfg.echo["params"]["tau"] = *ov.tau;
    }
    cfg.validate();
}

}  // namespace lorablend
