#include "zecon/presets.hpp"

#include <cctype>

namespace zecon {

namespace {

std::string slug(const std::string& prompt, const std::string& model) {
    std::string s;
    for (char c : prompt) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            s += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else if (!s.empty() && s.back() != '_') {
            s += '_';
        }
    }
    if (!s.empty() && s.back() == '_') s.pop_back();
    return s + "_" + model;
}

StylePreset row(const std::string& model, const std::string& prompt, double global, double dir, double zecon,
                double mse, double vgg, double patch, int t0) {
    StylePreset p;
    p.name = slug(prompt, model);
    p.model = model;
    p.target_prompt = prompt;
    p.source_prompt = "photo";
    p.weights = {global, dir, zecon, mse, vgg};
    p.patch_max_frac = patch;
    p.t0_index = t0;
    return p;
}

} // namespace

const std::vector<StylePreset>& style_presets() {
    static const std::vector<StylePreset> table = {
        //  model       prompt                             global  dir    zecon  mse    vgg  patch t0
        row("imagenet", "Golden",                          5000,  5000,  100,   5000,  10,  0.05, 15),
        row("imagenet", "Watercolor art",                  5000,  10000, 300,   0,     100, 0.3,  25),
        row("imagenet", "Stained glasses",                 15000, 15000, 200,   1000,  10,  0.05, 25),
        row("imagenet", "Oil painting of flowers",         20000, 20000, 1500,  10000, 10,  0.05, 25),
        row("imagenet", "Red bricks",                      20000, 40000, 1000,  1000,  10,  0.05, 25),
        row("imagenet", "Wooden",                          20000, 50000, 1000,  1000,  10,  0.05, 25),
        row("imagenet", "Leather",                         20000, 30000, 2000,  20000, 200, 0.3,  25),
        row("imagenet", "Marbling",                        20000, 30000, 2000,  20000, 200, 0.3,  25),
        row("imagenet", "Autumn",                          20000, 20000, 700,   10000, 100, 0.05, 25),
        row("imagenet", "Snowy",                           20000, 20000, 700,   0,     100, 0.05, 25),
        row("ffhq",     "Pop art",                         10000, 20000, 50,    1000,  50,  0.3,  25),
        row("ffhq",     "Stone wall",                      2000,  50000, 500,   5000,  10,  0.1,  25),
        row("ffhq",     "Tanned face",                     15000, 15000, 1000,  10000, 100, 0.3,  25),
        row("ffhq",     "Clay",                            40000, 40000, 1000,  10000, 0,   0.05, 25),
        row("ffhq",     "Portrait by Gogh",                10000, 7000,  10,    3000,  50,  0.3,  25),
        row("ffhq",     "A sketch with crayon",            10000, 20000, 500,   10000, 100, 0.3,  25),
        row("ffhq",     "3d render in the style of Pixar", 5000,  5000,  500,   10000, 100, 0.3,  25),
        row("ffhq",     "Golden",                          7000,  7000,  200,   0,     50,  0.05, 15),
        row("ffhq",     "Ukiyo-e",                         8000,  20000, 1000,  5000,  100, 0.3,  25),
        row("ffhq",     "Marbling",                        20000, 40000, 1000,  10000, 10,  0.3,  25),
    };
    return table;
}

std::optional<StylePreset> find_preset(const std::string& name) {
    for (const auto& p : style_presets())
        if (p.name == name) return p;
    return std::nullopt;
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& p : style_presets()) names.push_back(p.name);
    return names;
}

} // namespace zecon
