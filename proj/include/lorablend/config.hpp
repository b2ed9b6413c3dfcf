#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lorablend/blend.hpp"
#include "lorablend/model.hpp"
#include "lorablend/prior.hpp"

namespace lorablend {

// Everything one run needs, parsed from a single JSON config file.
// Schema documented in docs/formats.md; configs/default.json is the
// canonical example. Relative paths resolve against the config file's
// directory.
struct PipelineConfig {
    ModelConfig model;
    std::optional<std::string> checkpoint;  // overrides `model` when set
    PriorParams prior;
    BlendConfig blend;
    int steps                = 16;
    std::uint64_t noise_seed = 0;
    std::uint64_t prompt_seed = 0;
    std::vector<SubjectSpec> subjects;  // SubjectSpec::adapter holds a file path
    std::string out_dir = "out";

    nlohmann::ordered_json echo;  // parsed config, echoed into run reports

    void validate() const;  // ParamError on any out-of-range field
};

// Parses and validates. FormatError on malformed JSON or schema violations,
// IoError when the file or a referenced adapter/checkpoint is missing.
PipelineConfig load_config(const std::string& path);

struct ConfigOverrides {
    std::optional<std::uint64_t> seed;  // noise seed
    std::optional<int> steps;
    std::optional<std::string> out_dir;
    std::optional<double> gate_t;
    std::optional<double> gamma;
    std::optional<double> tau;
};

void apply_overrides(PipelineConfig& cfg, const ConfigOverrides& ov);

}  // namespace lorablend
