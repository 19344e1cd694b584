#include "zecon/pipeline.hpp"

#include "zecon/image_io.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace zecon {

using json = nlohmann::json;

std::string to_string(TaskMode m) { return m == TaskMode::whole_image ? "whole_image" : "style_transfer_patch"; }

namespace {

TaskMode task_mode_from_string(const std::string& s) {
    if (s == "style_transfer_patch" || s == "patch") return TaskMode::style_transfer_patch;
    if (s == "whole_image") return TaskMode::whole_image;
    throw ValidationError("pipeline", "unknown mode '" + s + "' (style_transfer_patch, whole_image)");
}

json patch_json(const PatchPolicy& p) {
    return {{"n_patches", p.n_patches},           {"min_frac", p.min_frac},
            {"max_frac", p.max_frac},             {"augment", p.augment},
            {"distortion_scale", p.distortion_scale}, {"max_rotation_deg", p.max_rotation_deg}};
}

} // namespace

json RunConfig::to_json() const {
    json j;
    if (!preset.empty()) j["preset"] = preset;
    if (schedule) {
        j["schedule"] = {{"T", schedule->steps}, {"beta_start", schedule->beta_start}, {"beta_end", schedule->beta_end}};
    }
    j["sampler"] = {{"forward_mode", to_string(sampler.forward_mode)},
                    {"reverse_mode", to_string(sampler.reverse_mode)},
                    {"eta", sampler.eta},
                    {"t0", sampler.t0_index},
                    {"T_prime", sampler.respaced_steps},
                    {"eps_mode", to_string(sampler.eps_mode)}};
    j["guidance_content"] = {{"zecon", weights.zecon},
                             {"vgg", weights.vgg},
                             {"mse", weights.mse},
                             {"layer_ids", contrastive.layer_ids},
                             {"locations_per_layer", contrastive.locations_per_layer},
                             {"temperature", contrastive.temperature}};
    j["guidance_style"] = {{"global", weights.global}, {"dir", weights.dir}, {"patch", patch_json(patch)}};
    j["models"] = {{"score", models.score.to_json()},
                   {"embedder", models.embedder.to_json()},
                   {"perceptual", models.perceptual.to_json()}};
    if (models.face) j["models"]["face"] = models.face->to_json();
    j["task"] = {{"source", task.source_image_path},
                 {"output", task.output_path},
                 {"source_prompt", task.prompts.source},
                 {"target_prompt", task.prompts.target},
                 {"seed", task.seed},
                 {"mode", to_string(task.mode)}};
    return j;
}

PatchPolicy RunConfig::effective_patch() const {
    return task.mode == TaskMode::whole_image ? PatchPolicy::whole_image() : patch;
}

RunConfig default_config() {
    RunConfig c;
    c.weights = find_preset("golden_imagenet")->weights;
    c.models.score.type = "toy_unet";
    c.models.score.image_size = 128;
    c.models.score.params = {{"channels", 16}, {"depth", 3}, {"seed", 0}};
    c.models.embedder.type = "stub";
    c.models.embedder.image_size = 16;
    c.models.embedder.params = {{"dim", 64}, {"seed", 0}};
    c.models.perceptual.type = "toy_conv";
    c.models.perceptual.params = {{"channels", 8}, {"seed", 0}};
    return c;
}

void apply_preset(RunConfig& config, const StylePreset& preset) {
    config.preset = preset.name;
    config.weights = preset.weights;
    config.patch.min_frac = preset.patch_min_frac;
    config.patch.max_frac = preset.patch_max_frac;
    config.sampler.t0_index = preset.t0_index;
    config.task.prompts.target = preset.target_prompt;
    config.task.prompts.source = preset.source_prompt;
}

json preset_config(const StylePreset& preset) {
    RunConfig c = default_config();
    apply_preset(c, preset);
    json j = c.to_json();
    j.erase("models");
    j["task"].erase("source");
    j["task"].erase("output");
    j["model_family"] = preset.model;
    return j;
}

ConfigError::ConfigError(std::vector<ConfigIssue> issues)
    : ValidationError("config",
                      [&] {
                          std::string s;
                          for (const auto& i : issues) s += (s.empty() ? "" : "; ") + i.path + ": " + i.message;
                          return s.empty() ? std::string("invalid config") : s;
                      }()),
      issues_(std::move(issues)) {}

namespace {

class Reader {
public:
    explicit Reader(ValidationMode mode) : mode_(mode) {}

    void fail(const std::string& path, const std::string& message) {
        issues_.push_back({path, message});
        if (mode_ == ValidationMode::first_error) throw ConfigError(issues_);
    }

    bool object(const json& parent, const std::string& key, const std::string& path,
                const std::set<std::string>& allowed) {
        if (!parent.contains(key)) return false;
        const auto& o = parent[key];
        if (!o.is_object()) {
            fail(path, "must be an object");
            return false;
        }
        for (const auto& [k, v] : o.items()) {
            if (!allowed.count(k)) fail(path + "." + k, "unknown field");
        }
        return true;
    }

    void number(const json& o, const std::string& key, const std::string& path, double& out) {
        if (!o.contains(key)) return;
        if (!o[key].is_number()) return fail(path, "must be a number");
        out = o[key].get<double>();
    }

    void integer(const json& o, const std::string& key, const std::string& path, long long& out) {
        if (!o.contains(key)) return;
        if (!o[key].is_number_integer()) return fail(path, "must be an integer");
        out = o[key].get<long long>();
    }

    template <class T>
    void count(const json& o, const std::string& key, const std::string& path, T& out, long long min) {
        if (!o.contains(key)) return;
        long long v = static_cast<long long>(out);
        integer(o, key, path, v);
        if (v < min) return fail(path, "must be >= " + std::to_string(min));
        out = static_cast<T>(v);
    }

    void seed(const json& o, const std::string& key, const std::string& path, std::uint64_t& out) {
        if (!o.contains(key)) return;
        if (o[key].is_number_unsigned()) {
            out = o[key].get<std::uint64_t>();
        } else if (o[key].is_number_integer()) {
            fail(path, "must be >= 0");
        } else {
            fail(path, "must be an integer");
        }
    }

    void boolean(const json& o, const std::string& key, const std::string& path, bool& out) {
        if (!o.contains(key)) return;
        if (!o[key].is_boolean()) return fail(path, "must be true or false");
        out = o[key].get<bool>();
    }

    void string(const json& o, const std::string& key, const std::string& path, std::string& out) {
        if (!o.contains(key)) return;
        if (!o[key].is_string()) return fail(path, "must be a string");
        out = o[key].get<std::string>();
    }

    template <class E, class F>
    void enumeration(const json& o, const std::string& key, const std::string& path, E& out, F parse) {
        std::string s;
        if (!o.contains(key)) return;
        string(o, key, path, s);
        if (!o[key].is_string()) return;
        try {
            out = parse(s);
        } catch (const Error& e) {
            fail(path, e.what());
        }
    }

    void weight(const json& o, const std::string& key, const std::string& path, double& out) {
        number(o, key, path, out);
        if (o.contains(key) && o[key].is_number() && out < 0) fail(path, "weight must be >= 0");
    }

    const std::vector<ConfigIssue>& issues() const { return issues_; }

private:
    ValidationMode mode_;
    std::vector<ConfigIssue> issues_;
};

void read_descriptor(Reader& r, const json& models, const std::string& key, ModelDescriptor& out) {
    const std::string path = "models." + key;
    if (!models.contains(key)) return;
    const auto& j = models[key];
    if (j.is_string()) {
        // shorthand: just the adapter type
        out = ModelDescriptor{};
        out.type = j.get<std::string>();
        return;
    }
    if (!j.is_object()) return r.fail(path, "must be an object or a type name");
    static const std::set<std::string> allowed{"type", "path", "image_size", "channels", "schedule", "layers", "params"};
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) r.fail(path + "." + k, "unknown field");
    }
    if (!j.contains("type") || !j["type"].is_string()) return r.fail(path + ".type", "adapter type is required");
    try {
        out = ModelDescriptor::from_json(j);
    } catch (const std::exception& e) {
        r.fail(path, e.what());
    }
    if (out.image_size && *out.image_size == 0) r.fail(path + ".image_size", "must be >= 1");
}

} // namespace

RunConfig validate_config(const json& doc, ValidationMode mode) {
    Reader r(mode);
    RunConfig c = default_config();
    if (doc.is_null()) return c;
    if (!doc.is_object()) {
        r.fail("", "config must be a JSON object");
        throw ConfigError(r.issues());
    }
    static const std::set<std::string> top{"preset", "schedule", "sampler", "guidance_content", "guidance_style",
                                           "models", "task", "model_family"};
    for (const auto& [k, v] : doc.items()) {
        if (!top.count(k)) r.fail(k, "unknown section");
    }

    if (doc.contains("preset")) {
        std::string name;
        r.string(doc, "preset", "preset", name);
        if (!name.empty()) {
            if (auto p = find_preset(name)) {
                apply_preset(c, *p);
            } else {
                r.fail("preset", "unknown preset '" + name + "'");
            }
        }
    }

    if (r.object(doc, "schedule", "schedule", {"T", "beta_start", "beta_end"})) {
        const auto& s = doc["schedule"];
        ScheduleSpec spec;
        long long T = spec.steps;
        r.integer(s, "T", "schedule.T", T);
        r.number(s, "beta_start", "schedule.beta_start", spec.beta_start);
        r.number(s, "beta_end", "schedule.beta_end", spec.beta_end);
        if (T < 2) r.fail("schedule.T", "must be >= 2");
        if (!(spec.beta_start > 0 && spec.beta_start <= spec.beta_end && spec.beta_end < 1)) {
            r.fail("schedule.beta_start", "need 0 < schedule.beta_start <= schedule.beta_end < 1");
        }
        spec.steps = static_cast<int>(std::max(T, 2LL));
        c.schedule = spec;
    }

    if (r.object(doc, "sampler", "sampler", {"forward_mode", "reverse_mode", "eta", "t0", "T_prime", "eps_mode"})) {
        const auto& s = doc["sampler"];
        r.enumeration(s, "forward_mode", "sampler.forward_mode", c.sampler.forward_mode, forward_mode_from_string);
        r.enumeration(s, "reverse_mode", "sampler.reverse_mode", c.sampler.reverse_mode, reverse_mode_from_string);
        r.enumeration(s, "eps_mode", "sampler.eps_mode", c.sampler.eps_mode, eps_mode_from_string);
        r.number(s, "eta", "sampler.eta", c.sampler.eta);
        r.count(s, "t0", "sampler.t0", c.sampler.t0_index, 0);
        r.count(s, "T_prime", "sampler.T_prime", c.sampler.respaced_steps, 1);
    }
    if (!(c.sampler.eta >= 0)) r.fail("sampler.eta", "must be >= 0");
    if (c.sampler.t0_index >= c.sampler.respaced_steps) {
        r.fail("sampler.t0", "sampler.t0 (" + std::to_string(c.sampler.t0_index) + ") must be < sampler.T_prime (" +
                                 std::to_string(c.sampler.respaced_steps) + ")");
    }
    if (c.schedule && c.sampler.respaced_steps > c.schedule->steps) {
        r.fail("sampler.T_prime", "sampler.T_prime (" + std::to_string(c.sampler.respaced_steps) +
                                      ") exceeds schedule.T (" + std::to_string(c.schedule->steps) + ")");
    }

    bool layers_set = false;
    if (r.object(doc, "guidance_content", "guidance_content",
                 {"zecon", "vgg", "mse", "layer_ids", "locations_per_layer", "temperature"})) {
        const auto& g = doc["guidance_content"];
        r.weight(g, "zecon", "guidance_content.zecon", c.weights.zecon);
        r.weight(g, "vgg", "guidance_content.vgg", c.weights.vgg);
        r.weight(g, "mse", "guidance_content.mse", c.weights.mse);
        if (g.contains("layer_ids")) {
            layers_set = true;
            const auto& l = g["layer_ids"];
            bool ok = l.is_array() && !l.empty();
            for (const auto& e : l) ok = ok && e.is_string();
            if (ok) {
                c.contrastive.layer_ids = l.get<std::vector<std::string>>();
            } else {
                r.fail("guidance_content.layer_ids", "must be a non-empty list of layer names");
            }
        }
        r.count(g, "locations_per_layer", "guidance_content.locations_per_layer", c.contrastive.locations_per_layer, 2);
        r.number(g, "temperature", "guidance_content.temperature", c.contrastive.temperature);
        if (!(c.contrastive.temperature > 0)) r.fail("guidance_content.temperature", "must be > 0");
    }

    if (r.object(doc, "guidance_style", "guidance_style", {"global", "dir", "patch"})) {
        const auto& g = doc["guidance_style"];
        r.weight(g, "global", "guidance_style.global", c.weights.global);
        r.weight(g, "dir", "guidance_style.dir", c.weights.dir);
        if (g.contains("patch") && g["patch"].is_string()) {
            if (g["patch"] == "whole_image") {
                c.patch = PatchPolicy::whole_image();
            } else {
                r.fail("guidance_style.patch", "unknown patch preset (only 'whole_image')");
            }
        } else if (r.object(g, "patch", "guidance_style.patch",
                            {"n_patches", "min_frac", "max_frac", "augment", "distortion_scale", "max_rotation_deg"})) {
            const auto& p = g["patch"];
            const std::string base = "guidance_style.patch.";
            r.count(p, "n_patches", base + "n_patches", c.patch.n_patches, 1);
            r.number(p, "min_frac", base + "min_frac", c.patch.min_frac);
            r.number(p, "max_frac", base + "max_frac", c.patch.max_frac);
            r.boolean(p, "augment", base + "augment", c.patch.augment);
            r.number(p, "distortion_scale", base + "distortion_scale", c.patch.distortion_scale);
            r.number(p, "max_rotation_deg", base + "max_rotation_deg", c.patch.max_rotation_deg);
        }
    }
    if (!(c.patch.min_frac > 0)) r.fail("guidance_style.patch.min_frac", "must be > 0");
    if (c.patch.min_frac > c.patch.max_frac) {
        r.fail("guidance_style.patch.min_frac", "patch min (" + std::to_string(c.patch.min_frac) + ") > max (" +
                                                    std::to_string(c.patch.max_frac) + ")");
    }
    if (c.patch.max_frac > 1) r.fail("guidance_style.patch.max_frac", "must be <= 1");
    if (c.patch.distortion_scale < 0 || c.patch.distortion_scale > 1) {
        r.fail("guidance_style.patch.distortion_scale", "must lie in [0, 1]");
    }
    if (c.patch.max_rotation_deg < 0) r.fail("guidance_style.patch.max_rotation_deg", "must be >= 0");

    if (r.object(doc, "models", "models", {"score", "embedder", "perceptual", "face"})) {
        const auto& m = doc["models"];
        read_descriptor(r, m, "score", c.models.score);
        read_descriptor(r, m, "embedder", c.models.embedder);
        read_descriptor(r, m, "perceptual", c.models.perceptual);
        if (m.contains("face")) {
            ModelDescriptor face;
            read_descriptor(r, m, "face", face);
            c.models.face = face;
        }
        const auto& reg = AdapterRegistry::global();
        auto known = [](const std::vector<std::string>& v, const std::string& t) {
            return std::find(v.begin(), v.end(), t) != v.end();
        };
        if (!known(reg.score_types(), c.models.score.type)) {
            r.fail("models.score.type", "unregistered score adapter '" + c.models.score.type + "'");
        }
        if (!known(reg.embedder_types(), c.models.embedder.type)) {
            r.fail("models.embedder.type", "unregistered embedder '" + c.models.embedder.type + "'");
        }
        if (!known(reg.perceptual_types(), c.models.perceptual.type)) {
            r.fail("models.perceptual.type", "unregistered perceptual extractor '" + c.models.perceptual.type + "'");
        }
        if (c.models.face && !known(reg.face_embedder_types(), c.models.face->type)) {
            r.fail("models.face.type", "unregistered face embedder '" + c.models.face->type + "'");
        }
    }
    if (!layers_set && !c.models.score.layers.empty()) c.contrastive.layer_ids = c.models.score.layers;

    if (r.object(doc, "task", "task", {"source", "output", "source_prompt", "target_prompt", "seed", "mode"})) {
        const auto& t = doc["task"];
        r.string(t, "source", "task.source", c.task.source_image_path);
        r.string(t, "output", "task.output", c.task.output_path);
        r.string(t, "source_prompt", "task.source_prompt", c.task.prompts.source);
        r.string(t, "target_prompt", "task.target_prompt", c.task.prompts.target);
        r.seed(t, "seed", "task.seed", c.task.seed);
        r.enumeration(t, "mode", "task.mode", c.task.mode, task_mode_from_string);
    }
    if (c.task.mode == TaskMode::whole_image && !c.task.prompts.target.empty() && c.task.prompts.source.empty()) {
        r.fail("task.source_prompt", "whole_image mode needs both prompts");
    }
    if (c.weights.dir > 0 && !c.task.prompts.target.empty() && c.task.prompts.source.empty()) {
        r.fail("task.source_prompt", "directional weight > 0 needs a source prompt");
    }

    if (!r.issues().empty()) throw ConfigError(r.issues());
    return c;
}

RunConfig validate_config(const std::string& text, ValidationMode mode) {
    std::string trimmed = text;
    trimmed.erase(0, trimmed.find_first_not_of(" \t\r\n"));
    if (trimmed.empty()) return default_config();
    json doc;
    try {
        doc = json::parse(text, nullptr, true, true);
    } catch (const json::parse_error& e) {
        throw ConfigError({{"", std::string("not valid JSON: ") + e.what()}});
    }
    return validate_config(doc, mode);
}

RunConfig load_config(const std::filesystem::path& path, ValidationMode mode) {
    std::ifstream in(path);
    if (!in) throw Error("pipeline", "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return validate_config(ss.str(), mode);
}

namespace {

std::filesystem::path default_checkpoint_root(const std::filesystem::path& given) {
    if (!given.empty()) return given;
    if (const char* env = std::getenv("ZECON_CHECKPOINT_DIR")) return env;
    return {};
}

std::string hex64(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << v;
    return os.str();
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 1469598103934665603ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace

std::string tensor_digest(const Tensor& t) { return hex64(fnv1a(t.data(), t.size() * sizeof(double))); }

LoadedModels load_models(const RunConfig& config, const Tensor* source, const std::filesystem::path& checkpoint_root) {
    LoadedModels m;
    LoadContext ctx;
    ctx.checkpoint_root = default_checkpoint_root(checkpoint_root);
    ctx.source_image = source;
    if (config.schedule) {
        ctx.run_schedule = *config.schedule;
        ctx.run_schedule->respaced_steps = config.sampler.respaced_steps;
    }
    auto& reg = AdapterRegistry::global();
    try {
        m.score = load_pretrained(config.models.score, ctx);
    } catch (const Error& e) {
        throw Error("models.score", e.what());
    }

    std::optional<NoiseSchedule> base;
    if (config.schedule) {
        base = make_linear_schedule(config.schedule->steps, config.schedule->beta_start, config.schedule->beta_end);
        m.schedule_source = "config";
    } else if (auto native = m.score->native_schedule()) {
        base = *native;
        m.schedule_source = "checkpoint";
    } else {
        const ScheduleSpec d;
        base = make_linear_schedule(d.steps, d.beta_start, d.beta_end);
        m.schedule_source = "default";
    }
    if (config.sampler.respaced_steps > static_cast<int>(base->steps())) {
        throw ValidationError("pipeline", "T_prime " + std::to_string(config.sampler.respaced_steps) +
                                              " exceeds schedule length " + std::to_string(base->steps()));
    }
    m.schedule = std::make_shared<RespacedSchedule>(*base, config.sampler.respaced_steps);

    const auto& w = config.weights;
    if (w.global > 0 || w.dir > 0) m.embedder = reg.load_embedder(config.models.embedder, ctx);
    if (w.vgg > 0) m.perceptual = reg.load_perceptual(config.models.perceptual, ctx);
    if (config.models.face) m.face = reg.load_face_embedder(*config.models.face, ctx);
    return m;
}

std::filesystem::path manifest_path_for(const std::filesystem::path& output) {
    return output.string() + ".manifest.json";
}

RunOutcome run_task(const StyleTask& task, const RunConfig& base_config, const RunOptions& options) {
    RunConfig config = base_config;
    config.task = task;
    const auto started = std::chrono::steady_clock::now();
    const auto wall_start = std::chrono::system_clock::now();

    if (config.task.prompts.target.empty() && !config.weights.all_zero()) {
        throw ValidationError("pipeline", "target prompt is required");
    }
    if (config.task.mode == TaskMode::whole_image && config.task.prompts.source.empty() &&
        (config.weights.global > 0 || config.weights.dir > 0)) {
        throw ValidationError("pipeline", "whole_image mode needs both source and target prompts");
    }

    Tensor source;
    if (options.source) {
        source = *options.source;
    } else {
        if (config.task.source_image_path.empty()) throw ValidationError("pipeline", "no source image given");
        source = read_image(config.task.source_image_path);
    }
    if (source.rank() != 3 || source.dim(0) != 3) {
        throw ValidationError("pipeline", "source must be a 3-channel image, got " + shape_str(source.shape()));
    }
    if (source.dim(1) != source.dim(2)) {
        throw ValidationError("pipeline", "source image must be square, got " + std::to_string(source.dim(2)) + "x" +
                                              std::to_string(source.dim(1)));
    }
    if (config.models.score.image_size) source = resize_square(source, *config.models.score.image_size);

    LoadedModels models = load_models(config, &source, options.checkpoint_root);
    if (auto size = models.score->image_size(); size && *size != source.dim(1)) source = resize_square(source, *size);

    std::shared_ptr<GuidanceEvaluator> guidance;
    if (config.weights.all_zero()) {
        guidance = std::make_shared<NullGuidance>();
    } else {
        ZeconGuidance::Options go{config.weights, config.contrastive, config.effective_patch(), config.task.prompts};
        guidance = std::make_shared<ZeconGuidance>(source, go, models.score, models.embedder, models.perceptual);
    }

    RunOutcome out;
    out.source = source;
    out.result = sample(source, *models.schedule, config.sampler, *models.score, *guidance,
                        RandomStream(config.task.seed, "run"));
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    json trace = json::array();
    json step_seconds = json::array();
    for (const auto& s : out.result.trace) {
        json terms = json::object();
        for (const auto& [name, v] : s.terms.values) terms[name] = v;
        trace.push_back({{"k", s.k}, {"t", s.t}, {"loss", s.loss}, {"grad_norm", s.grad_norm}, {"terms", terms}});
        step_seconds.push_back(s.seconds);
    }
    const auto& rs = *models.schedule;
    const std::time_t wall = std::chrono::system_clock::to_time_t(wall_start);
    std::ostringstream stamp;
    stamp << std::put_time(std::gmtime(&wall), "%Y-%m-%dT%H:%M:%SZ");

    out.manifest = {
        {"format", "zecon.manifest.v1"},
        {"config", config.to_json()},
        {"seed", config.task.seed},
        {"schedule",
         {{"source", models.schedule_source},
          {"T", rs.base().steps()},
          {"T_prime", rs.steps()},
          {"betas_digest", hex64(fnv1a(rs.base().betas().data(), rs.base().betas().size() * sizeof(double)))}}},
        {"models",
         {{"score", models.score->name()},
          {"embedder", models.embedder ? models.embedder->name() : ""},
          {"perceptual", models.perceptual ? models.perceptual->name() : ""}}},
        {"source_digest", tensor_digest(source)},
        {"image_digest", tensor_digest(out.result.image)},
        {"image_shape", out.result.image.shape()},
        {"loss_trace", trace},
        {"timings", {{"started_at", stamp.str()}, {"total_seconds", total}, {"step_seconds", step_seconds}}},
    };

    if (options.write_outputs) {
        if (config.task.output_path.empty()) throw ValidationError("pipeline", "no output path given");
        out.output_path = config.task.output_path;
        out.manifest_path = manifest_path_for(out.output_path);
        write_image(out.result.image, out.output_path);
        std::ofstream mf(out.manifest_path);
        if (!mf) throw Error("pipeline", "cannot write manifest " + out.manifest_path.string());
        mf << out.manifest.dump(2) << "\n";
    }
    return out;
}

RunOutcome run_task(const RunConfig& config, const RunOptions& options) { return run_task(config.task, config, options); }

RunOutcome rerun_manifest(const json& manifest, const RunOptions& options,
                          const std::optional<std::string>& output_override) {
    if (!manifest.contains("config")) throw ValidationError("pipeline", "manifest has no embedded config");
    RunConfig config = validate_config(manifest["config"]);
    if (output_override) config.task.output_path = *output_override;
    return run_task(config, options);
}

json strip_volatile(json manifest) {
    manifest.erase("timings");
    return manifest;
}

std::uint64_t derive_seed(std::uint64_t base, std::size_t index) {
    // splitmix64 step
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

json error_record(const std::exception& e) {
    json err{{"message", e.what()}};
    if (const auto* ze = dynamic_cast<const Error*>(&e)) err["component"] = ze->component();
    if (const auto* se = dynamic_cast<const StepError*>(&e)) err["step"] = se->step();
    if (const auto* ce = dynamic_cast<const ConfigError*>(&e)) {
        json issues = json::array();
        for (const auto& i : ce->issues()) issues.push_back({{"path", i.path}, {"message", i.message}});
        err["issues"] = issues;
    }
    return {{"error", err}};
}

std::vector<BatchItem> run_batch(const std::vector<StyleTask>& tasks, const RunConfig& config,
                                 const RunOptions& options, std::size_t threads) {
    std::vector<BatchItem> items(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            StyleTask t = tasks[i];
            t.seed = derive_seed(t.seed, i);
            try {
                items[i].outcome = run_task(t, config, options);
                items[i].ok = true;
            } catch (const std::exception& e) {
                items[i].error = error_record(e);
            }
        }
    };
    const std::size_t n = std::max<std::size_t>(1, std::min(threads, tasks.size()));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return items;
}

} // namespace zecon
