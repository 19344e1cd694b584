#pragma once

#include "zecon/guidance_style.hpp"
#include "zecon/models.hpp"
#include "zecon/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace zecon {

/// Cosine similarity between the image embedding and the target text
/// embedding; higher is better. With a policy, averaged over its patches.
double clip_score(const Tensor& x, const std::string& target, const EmbedderAdapter& embedder);
double clip_score(const Tensor& x, const std::string& target, const EmbedderAdapter& embedder,
                  const PatchPolicy& policy, RandomStream& rng);

/// Cosine distance between face embeddings; nullopt when no face embedder is registered.
std::optional<double> identity_distance(const Tensor& x, const Tensor& x_ref, const ImageEmbedder* face);

struct EvalRow {
    std::string id;
    double clip_global = 0.0;
    double clip_patch = 0.0;
    std::optional<double> identity_distance;
    std::optional<double> seconds;
};

struct EvalReport {
    std::string target_prompt;
    PatchPolicy patch_policy;
    std::uint64_t seed = 0;
    std::vector<EvalRow> rows;

    /// Means over rows; metrics missing in any row are reported unavailable.
    nlohmann::json aggregates() const;
    nlohmann::json to_json() const;
    /// One tab-separated line per image followed by a summary block.
    std::string to_text() const;
};

struct EvalInput {
    std::string id;
    Tensor image;
    std::optional<Tensor> reference;  ///< for the identity metric
    std::optional<double> seconds;
};

EvalReport evaluate(const std::vector<EvalInput>& inputs, const std::string& target, const EmbedderAdapter& embedder,
                    const PatchPolicy& policy, std::uint64_t seed, const ImageEmbedder* face = nullptr);

struct BenchmarkStats {
    std::vector<double> seconds;
    double median = 0.0;
    double spread = 0.0;  ///< max - min
    nlohmann::json to_json() const;
};

BenchmarkStats benchmark(const StyleTask& task, const RunConfig& config, std::size_t repetitions,
                         const RunOptions& options = {});

} // namespace zecon
