#pragma once

#include "zecon/guidance.hpp"

#include <optional>
#include <string>
#include <vector>

namespace zecon {

/// One row of the published per-style hyperparameter table.
struct StylePreset {
    std::string name;          ///< slug, e.g. "golden_imagenet"
    std::string model;         ///< "imagenet" or "ffhq"
    std::string target_prompt;
    std::string source_prompt;
    GuidanceWeights weights;
    double patch_max_frac = 0.3;
    double patch_min_frac = 0.01;
    int t0_index = 25;         ///< at T_prime = 50
};

const std::vector<StylePreset>& style_presets();
std::optional<StylePreset> find_preset(const std::string& name);
std::vector<std::string> preset_names();

} // namespace zecon
