#pragma once

#include "zecon/error.hpp"
#include "zecon/guidance.hpp"
#include "zecon/models.hpp"
#include "zecon/presets.hpp"
#include "zecon/sampler.hpp"
#include "zecon/schedule.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace zecon {

enum class TaskMode { style_transfer_patch, whole_image };
std::string to_string(TaskMode m);

struct StyleTask {
    std::string source_image_path;
    std::string output_path;
    PromptPair prompts;
    std::uint64_t seed = 0;
    TaskMode mode = TaskMode::style_transfer_patch;

    friend bool operator==(const StyleTask&, const StyleTask&) = default;
};

struct ModelSet {
    ModelDescriptor score;
    ModelDescriptor embedder;
    ModelDescriptor perceptual;
    std::optional<ModelDescriptor> face;
};

struct RunConfig {
    std::string preset;                   ///< name of the preset applied first, if any
    std::optional<ScheduleSpec> schedule; ///< unset: adopt the checkpoint's schedule, else the default
    SamplerConfig sampler;
    GuidanceWeights weights;
    PatchPolicy patch;
    ContrastiveConfig contrastive;
    ModelSet models;
    StyleTask task;

    nlohmann::json to_json() const;
    /// Patch policy actually used: whole-image mode overrides the configured one.
    PatchPolicy effective_patch() const;
};

/// All defaults: (T', t0) = (50, 25), toy models, weights of the ImageNET "Golden" row.
RunConfig default_config();
void apply_preset(RunConfig& config, const StylePreset& preset);
/// Full config document for a preset (what `presets export` writes).
nlohmann::json preset_config(const StylePreset& preset);

struct ConfigIssue {
    std::string path;
    std::string message;
};

class ConfigError : public ValidationError {
public:
    explicit ConfigError(std::vector<ConfigIssue> issues);
    const std::vector<ConfigIssue>& issues() const noexcept { return issues_; }

private:
    std::vector<ConfigIssue> issues_;
};

enum class ValidationMode { first_error, all_errors };

/// Parses JSON config text, applies the preset (if named) and defaults, and
/// checks every field. Throws ConfigError listing offending field paths.
RunConfig validate_config(const std::string& text, ValidationMode mode = ValidationMode::all_errors);
RunConfig validate_config(const nlohmann::json& doc, ValidationMode mode = ValidationMode::all_errors);
RunConfig load_config(const std::filesystem::path& path, ValidationMode mode = ValidationMode::all_errors);

struct RunOptions {
    std::filesystem::path checkpoint_root;  ///< defaults to $ZECON_CHECKPOINT_DIR
    std::optional<Tensor> source;           ///< in-memory source image, bypasses the file
    bool write_outputs = true;
};

/// Adapters and schedule resolved for one run.
struct LoadedModels {
    std::shared_ptr<ScoreAdapter> score;
    std::shared_ptr<EmbedderAdapter> embedder;
    std::shared_ptr<PerceptualExtractor> perceptual;
    std::shared_ptr<ImageEmbedder> face;
    std::shared_ptr<RespacedSchedule> schedule;
    std::string schedule_source;  ///< "config", "checkpoint" or "default"
};

LoadedModels load_models(const RunConfig& config, const Tensor* source, const std::filesystem::path& checkpoint_root);

struct RunOutcome {
    Tensor source;      ///< source image as fed to the sampler
    SampleResult result;
    nlohmann::json manifest;
    std::filesystem::path output_path;
    std::filesystem::path manifest_path;
};

std::filesystem::path manifest_path_for(const std::filesystem::path& output);

/// Guided sampling for one task. Writes `<output>` and `<output>.manifest.json`
/// unless `write_outputs` is off.
RunOutcome run_task(const StyleTask& task, const RunConfig& config, const RunOptions& options = {});
RunOutcome run_task(const RunConfig& config, const RunOptions& options = {});

/// Re-runs the embedded config and seed of a manifest.
RunOutcome rerun_manifest(const nlohmann::json& manifest, const RunOptions& options = {},
                          const std::optional<std::string>& output_override = std::nullopt);

/// Manifest without wall-clock fields, for comparing runs.
nlohmann::json strip_volatile(nlohmann::json manifest);

/// Seed of the i-th task in a batch.
std::uint64_t derive_seed(std::uint64_t base, std::size_t index);

struct BatchItem {
    bool ok = false;
    std::optional<RunOutcome> outcome;
    nlohmann::json error;
};

/// Runs independent tasks on up to `threads` workers, task i seeded with derive_seed(base, i).
std::vector<BatchItem> run_batch(const std::vector<StyleTask>& tasks, const RunConfig& config,
                                 const RunOptions& options, std::size_t threads);

/// Machine-readable record for any library error.
nlohmann::json error_record(const std::exception& e);

/// Hex FNV-1a digest of the raw tensor bytes.
std::string tensor_digest(const Tensor& t);

} // namespace zecon
