#pragma once

#include "zecon/autodiff.hpp"
#include "zecon/guidance_content.hpp"
#include "zecon/models.hpp"
#include "zecon/random.hpp"

#include <array>
#include <string>
#include <vector>

namespace zecon {

/// How patches are cut from the denoised estimate for the text-image losses.
struct PatchPolicy {
    std::size_t n_patches = 96;
    double min_frac = 0.01; ///< crop side as a fraction of the image side
    double max_frac = 0.3;
    bool augment = true;
    double distortion_scale = 0.5;  ///< perspective corner jitter, fraction of half-side
    double max_rotation_deg = 15.0; ///< affine rotation range (+/-)

    /// One un-augmented crop covering the full image.
    static PatchPolicy whole_image();
    bool is_whole_image() const;
    void validate() const;
    /// Additionally rejects crops smaller than one pixel for this image side.
    void validate_for(std::size_t image_side) const;
};

/// Geometry recorded for each emitted patch.
struct PatchGeometry {
    double crop_frac = 1.0;
    double left = 0.0, top = 0.0, side = 0.0; ///< crop rectangle in source pixels
    double rotation_deg = 0.0;
    std::array<double, 8> perspective_end{}; ///< warped corner positions (x, y) x 4, crop-local
};

struct PatchPlan {
    std::vector<ad::SampleMap> maps;
    std::vector<PatchGeometry> geometry;
};

/// Draws N crops (side uniform in [min_frac, max_frac] of the image side),
/// optionally perspective-warped then rotated, each resampled to `out_size`.
PatchPlan plan_patches(std::size_t image_side, const PatchPolicy& policy, std::size_t out_size, RandomStream& rng);

std::vector<ad::Var> crop_and_augment(const ad::Var& image, const PatchPolicy& policy, std::size_t out_size,
                                      RandomStream& rng, std::vector<PatchGeometry>* geometry = nullptr);

struct PromptPair {
    std::string source;
    std::string target;

    friend bool operator==(const PromptPair&, const PromptPair&) = default;
};

/// Mean over the batch of 1 - cos(E_img(x_i), text_embedding).
ad::Var global_clip_loss(const std::vector<ad::Var>& batch, const Tensor& text_embedding,
                         const EmbedderAdapter& embedder);
ad::Var global_clip_loss(const std::vector<ad::Var>& batch, const std::string& target,
                         const EmbedderAdapter& embedder);

/// Mean over the batch of 1 - cos(dI_i, dT) with dI_i = E_img(x0) - E_img(x_i)
/// and dT = E_txt(source) - E_txt(target). A zero-length direction is an error.
ad::Var directional_clip_loss(const std::vector<ad::Var>& batch, const Tensor& source_image_embedding,
                              const Tensor& text_direction, const EmbedderAdapter& embedder);
ad::Var directional_clip_loss(const std::vector<ad::Var>& batch, const Tensor& x0, const PromptPair& prompts,
                              const EmbedderAdapter& embedder);

struct StyleWeights {
    double global = 0.0;
    double dir = 0.0;
};

/// Text and source-image embeddings reused across steps.
struct StyleTargets {
    Tensor target_text;
    Tensor text_direction;   ///< empty when no source prompt
    Tensor source_image;     ///< E_img(x0) on the full image
    static StyleTargets compute(const Tensor& x0, const PromptPair& prompts, const EmbedderAdapter& embedder);
};

/// w_global * global + w_dir * directional, both over one patch batch drawn from x_hat.
ad::Var style_loss(const ad::Var& x_hat, const StyleTargets& targets, const PatchPolicy& policy,
                   const StyleWeights& weights, const EmbedderAdapter& embedder, RandomStream& rng,
                   LossTerms* terms = nullptr);
ad::Var style_loss(const ad::Var& x_hat, const Tensor& x0, const PromptPair& prompts, const PatchPolicy& policy,
                   const StyleWeights& weights, const EmbedderAdapter& embedder, RandomStream& rng,
                   LossTerms* terms = nullptr);

} // namespace zecon
