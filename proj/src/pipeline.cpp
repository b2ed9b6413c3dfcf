#include "lorablend/pipeline.hpp"

#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "lorablend/adapter.hpp"
#include "lorablend/blend.hpp"
#include "lorablend/io.hpp"
#include "lorablend/prior.hpp"

namespace lorablend {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

enum class LogLevel { Quiet = 0, Error, Warn, Info, Debug };

LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("LORABLEND_LOG");
        if (!env) {
            return LogLevel::Info;
        }
        const std::string v(env);
        if (v == "quiet") return LogLevel::Quiet;
        if (v == "error") return LogLevel::Error;
        if (v == "warn") return LogLevel::Warn;
        if (v == "debug") return LogLevel::Debug;
        return LogLevel::Info;
    }();
    return level;
}

void log_line(LogLevel lvl, const std::string& msg) {
    static const char* names[] = {"", "error", "warn", "info", "debug"};
    if (lvl <= log_level() && lvl != LogLevel::Quiet) {
        std::cerr << "[" << names[static_cast<int>(lvl)] << "] " << msg << "\n";
    }
}

std::string sanitize(const std::string& name) {
    std::string out;
    for (const char c : name) {
        out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    }
    return out.empty() ? "subject" : out;
}

int classify(const std::exception& e) {
    if (dynamic_cast<const FormatError*>(&e) || dynamic_cast<const IoError*>(&e)) {
        return 2;
    }
    return 1;
}

double ms_since(const std::chrono::steady_clock::time_point& t0) {
    const auto dt = std::chrono::steady_clock::now() - t0;
    return std::chrono::duration<double, std::milli>(dt).count();
}

void write_report(const std::string& out_dir, const ordered_json& report) {
    try {
        fs::create_directories(out_dir);
        std::ofstream out(fs::path(out_dir) / "report.json");
        out << report.dump(2) << "\n";
        if (!out) {
            throw IoError("report write failed");
        }
    } catch (const std::exception& e) {
        // last resort: the report still has to surface somewhere
        std::cerr << "[error] could not write report to '" << out_dir << "': " << e.what() << "\n"
                  << report.dump(2) << "\n";
    }
}

Model resolve_model(const PipelineConfig& cfg) {
    if (cfg.checkpoint) {
        log_line(LogLevel::Info, "loading model checkpoint " + *cfg.checkpoint);
        return Model::load(*cfg.checkpoint);
    }
    return Model::init(cfg.model);
}

std::vector<AdapterBundle> load_bundles(const PipelineConfig& cfg) {
    std::vector<AdapterBundle> bundles;
    bundles.reserve(cfg.subjects.size());
    for (const auto& s : cfg.subjects) {
        log_line(LogLevel::Debug, "loading adapter " + s.adapter);
        bundles.push_back(load_adapter(s.adapter));
    }
    return bundles;
}

ordered_json prior_section(const PipelineConfig& cfg, const PriorExtraction& ex,
                           std::vector<std::string>& warnings) {
    ordered_json arr = ordered_json::array();
    const int cells  = cfg.model.image_tokens();
    for (std::size_t u = 0; u < cfg.subjects.size(); ++u) {
        int claimed = 0;
        for (const auto v : ex.priors[u].data) {
            claimed += v;
        }
        ordered_json entry;
        entry["subject"]          = cfg.subjects[u].name;
        entry["claimed_cells"]    = claimed;
        entry["claimed_fraction"] = static_cast<double>(claimed) / cells;
        entry["components"]       = ex.blob_reports[u].components;
        entry["blob_passes"]      = ex.blob_reports[u].passes_used;
        entry["blob_exhausted"]   = ex.blob_reports[u].exhausted;
        if (ex.blob_reports[u].exhausted) {
            warnings.push_back("subject '" + cfg.subjects[u].name + "': smoothing passes exhausted (P=" +
                               std::to_string(cfg.prior.max_passes) + ")");
        }
        arr.push_back(std::move(entry));
    }
    return arr;
}

void write_masks(const PipelineConfig& cfg, const PriorExtraction& ex, ordered_json& artifacts) {
    for (std::size_t u = 0; u < cfg.subjects.size(); ++u) {
        const std::string stem = "mask_" + sanitize(cfg.subjects[u].name);
        const std::string pgm  = (fs::path(cfg.out_dir) / (stem + ".pgm")).string();
        const std::string raw  = (fs::path(cfg.out_dir) / (stem + ".f32")).string();
        write_pgm(pgm, ex.priors[u]);
        write_grid_f32(raw, ex.priors[u]);
        artifacts[stem + ".pgm"] = checksum_hex(fnv1a_file(pgm));
        artifacts[stem + ".f32"] = checksum_hex(fnv1a_file(raw));
    }
}

ordered_json gate_section(const PipelineConfig& cfg, const BlendTrace& trace) {
    ordered_json gate;
    gate["t"]                = cfg.blend.gate_t;
    gate["base_forwards"]    = trace.base_forwards;
    gate["adapter_forwards"] = trace.adapter_forwards;
    gate["per_adapter_forwards"] = trace.per_adapter_forwards;
    ordered_json steps = ordered_json::array();
    for (const auto& s : trace.steps) {
        steps.push_back({{"step", s.step}, {"flow_time", s.flow_time}, {"blended", s.blended}});
    }
    gate["steps"] = std::move(steps);
    return gate;
}

}  // namespace

int cmd_prior(const PipelineConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    ordered_json report;
    report["command"] = "prior";
    report["config"]  = cfg.echo;
    int code = 0;
    try {
        fs::create_directories(cfg.out_dir);
        const Model model = resolve_model(cfg);
        load_bundles(cfg);  // config contract: referenced adapters must load
        const FeatureMatrix prompt = seeded_prompt(model.config(), cfg.prompt_seed);
        const FeatureMatrix z1     = seeded_noise(model.config(), cfg.noise_seed);

        const auto t_prior = std::chrono::steady_clock::now();
        const PriorExtraction ex =
            extract_priors(model, prompt, cfg.subjects, cfg.prior, cfg.steps, z1);

        std::vector<std::string> warnings;
        report["priors"]        = prior_section(cfg, ex, warnings);
        report["capture"]       = {{"block", ex.capture_block},
                                   {"flow_time", ex.capture_time},
                                   {"forwards", ex.forwards_used}};
        ordered_json artifacts;
        write_masks(cfg, ex, artifacts);
        report["artifacts"]          = std::move(artifacts);
        report["warnings"]           = warnings;
        report["status"]             = "ok";
        report["timings_ms"]         = {{"prior", ms_since(t_prior)}, {"total", ms_since(t0)}};
        for (const auto& w : warnings) {
            log_line(LogLevel::Warn, w);
        }
        log_line(LogLevel::Info, "prior: wrote " + std::to_string(cfg.subjects.size()) +
                                     " mask pair(s) to " + cfg.out_dir);
    } catch (const std::exception& e) {
        code              = classify(e);
        report["status"]  = "error";
        report["error"]   = e.what();
        report["timings_ms"] = {{"total", ms_since(t0)}};
        log_line(LogLevel::Error, e.what());
    }
    write_report(cfg.out_dir, report);
    return code;
}

int cmd_gen(const PipelineConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    ordered_json report;
    report["command"] = "gen";
    report["config"]  = cfg.echo;
    int code = 0;
    try {
        fs::create_directories(cfg.out_dir);
        const Model model = resolve_model(cfg);
        const std::vector<AdapterBundle> bundles = load_bundles(cfg);
        const FeatureMatrix prompt = seeded_prompt(model.config(), cfg.prompt_seed);
        const FeatureMatrix z1     = seeded_noise(model.config(), cfg.noise_seed);

        const auto t_prior = std::chrono::steady_clock::now();
        const PriorExtraction ex =
            extract_priors(model, prompt, cfg.subjects, cfg.prior, cfg.steps, z1);
        const double prior_ms = ms_since(t_prior);

        const auto t_denoise = std::chrono::steady_clock::now();
        BlendTrace trace;
        const FeatureMatrix latent =
            blended_denoise(model, bundles, ex.priors, z1, cfg.steps, prompt, cfg.blend, &trace);
        const double denoise_ms = ms_since(t_denoise);

        std::vector<std::string> warnings;
        report["priors"]  = prior_section(cfg, ex, warnings);
        report["capture"] = {{"block", ex.capture_block},
                             {"flow_time", ex.capture_time},
                             {"forwards", ex.forwards_used}};
        report["gate"]    = gate_section(cfg, trace);
        report["blend_checks"] = {{"prompt_rows_identical", trace.prompt_rows_base_identical},
                                  {"unclaimed_rows_identical", trace.unclaimed_rows_base_identical}};

        ordered_json artifacts;
        write_masks(cfg, ex, artifacts);
        const std::string latent_path = (fs::path(cfg.out_dir) / "latent.f32").string();
        write_matrix_f32(latent_path, latent);
        artifacts["latent.f32"]   = checksum_hex(fnv1a_file(latent_path));
        report["artifacts"]       = std::move(artifacts);
        report["latent_checksum"] = checksum_hex(trace.final_checksum);
        report["warnings"]        = warnings;
        report["status"]          = "ok";
        report["timings_ms"] = {{"prior", prior_ms}, {"denoise", denoise_ms}, {"total", ms_since(t0)}};
        log_line(LogLevel::Info,
                 "gen: wrote latent.f32 (checksum " + checksum_hex(trace.final_checksum) + ")");
    } catch (const std::exception& e) {
        code              = classify(e);
        report["status"]  = "error";
        report["error"]   = e.what();
        report["timings_ms"] = {{"total", ms_since(t0)}};
        log_line(LogLevel::Error, e.what());
    }
    write_report(cfg.out_dir, report);
    return code;
}

int cmd_edit(const PipelineConfig& cfg, const std::string& latent_path) {
    const auto t0 = std::chrono::steady_clock::now();
    ordered_json report;
    report["command"] = "edit";
    report["config"]  = cfg.echo;
    report["input_latent"] = latent_path;
    int code = 0;
    try {
        fs::create_directories(cfg.out_dir);
        const Model model = resolve_model(cfg);
        const std::vector<AdapterBundle> bundles = load_bundles(cfg);
        const FeatureMatrix prompt = seeded_prompt(model.config(), cfg.prompt_seed);

        const FeatureMatrix z0 = read_matrix_f32(latent_path);
        if (z0.rows != cfg.model.image_tokens() || z0.cols != cfg.model.channels) {
            throw FormatError("input latent has shape " + std::to_string(z0.rows) + "x" +
                                  std::to_string(z0.cols) + ", expected " +
                                  std::to_string(cfg.model.image_tokens()) + "x" +
                                  std::to_string(cfg.model.channels),
                              0);
        }

        const auto t_edit = std::chrono::steady_clock::now();
        const EditResult edit =
            edit_image(model, bundles, cfg.subjects, z0, cfg.steps, cfg.prior, cfg.blend, prompt);
        const double edit_ms = ms_since(t_edit);

        // reconstruction quality of the inversion itself
        const FeatureMatrix recon = model.flow_denoise(edit.recovered_noise, cfg.steps, prompt);
        double rms = 0.0;
        for (std::size_t i = 0; i < z0.data.size(); ++i) {
            const double d = recon.data[i] - z0.data[i];
            rms += d * d;
        }
        rms = std::sqrt(rms / static_cast<double>(z0.data.size()));

        std::vector<std::string> warnings;
        report["priors"]    = prior_section(cfg, edit.extraction, warnings);
        report["gate"]      = gate_section(cfg, edit.trace);
        report["blend_checks"] = {
            {"prompt_rows_identical", edit.trace.prompt_rows_base_identical},
            {"unclaimed_rows_identical", edit.trace.unclaimed_rows_base_identical}};
        report["inversion"] = {{"round_trip_rms", rms}, {"steps", cfg.steps}};

        ordered_json artifacts;
        write_masks(cfg, edit.extraction, artifacts);
        const std::string out_latent = (fs::path(cfg.out_dir) / "latent_edited.f32").string();
        write_matrix_f32(out_latent, edit.latent);
        artifacts["latent_edited.f32"] = checksum_hex(fnv1a_file(out_latent));
        report["artifacts"]       = std::move(artifacts);
        report["latent_checksum"] = checksum_hex(edit.trace.final_checksum);
        report["warnings"]        = warnings;
        report["status"]          = "ok";
        report["timings_ms"]      = {{"edit", edit_ms}, {"total", ms_since(t0)}};
        log_line(LogLevel::Info, "edit: wrote latent_edited.f32, inversion rms " + std::to_string(rms));
    } catch (const std::exception& e) {
        code              = classify(e);
        report["status"]  = "error";
        report["error"]   = e.what();
        report["timings_ms"] = {{"total", ms_since(t0)}};
        log_line(LogLevel::Error, e.what());
    }
    write_report(cfg.out_dir, report);
    return code;
}

}  // namespace lorablend
