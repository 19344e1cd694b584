#pragma once

#include "zecon/guidance_content.hpp"
#include "zecon/guidance_style.hpp"
#include "zecon/models.hpp"

#include <memory>

namespace zecon {

/// The five per-loss weights of the total guidance objective.
struct GuidanceWeights {
    double global = 0.0;
    double dir = 0.0;
    double zecon = 0.0;
    double mse = 0.0;
    double vgg = 0.0;

    bool all_zero() const { return global == 0 && dir == 0 && zecon == 0 && mse == 0 && vgg == 0; }
    ContentWeights content() const { return {zecon, vgg, mse}; }
    StyleWeights style() const { return {global, dir}; }

    friend bool operator==(const GuidanceWeights&, const GuidanceWeights&) = default;
};

struct GuidanceResult {
    double loss = 0.0;
    Tensor grad;      ///< -d(loss)/d(x0_hat): adding it descends the loss
    LossTerms terms;  ///< unweighted term values
};

/// Evaluates the weighted loss at a denoised estimate. Implementations must be
/// safe to call from one sampling run at a time; they own no sampler state.
class GuidanceEvaluator {
public:
    virtual ~GuidanceEvaluator() = default;
    /// False means the sampler may skip evaluation (and the rng draw) entirely.
    virtual bool active() const = 0;
    virtual GuidanceResult evaluate(const Tensor& x0_hat, std::size_t t, RandomStream& rng) const = 0;
};

class NullGuidance final : public GuidanceEvaluator {
public:
    bool active() const override { return false; }
    GuidanceResult evaluate(const Tensor& x0_hat, std::size_t t, RandomStream& rng) const override;
};

/// Content (contrastive + perceptual + pixel) plus style (global + directional)
/// guidance bound to one source image and prompt pair.
class ZeconGuidance final : public GuidanceEvaluator {
public:
    struct Options {
        GuidanceWeights weights;
        ContrastiveConfig contrastive;
        PatchPolicy patches;
        PromptPair prompts;
    };

    ZeconGuidance(Tensor x0, Options options, std::shared_ptr<const ScoreAdapter> model,
                  std::shared_ptr<const EmbedderAdapter> embedder,
                  std::shared_ptr<const PerceptualExtractor> extractor);

    bool active() const override { return !options_.weights.all_zero(); }
    GuidanceResult evaluate(const Tensor& x0_hat, std::size_t t, RandomStream& rng) const override;

    /// Weighted loss as a graph node; exposed for gradient checks.
    ad::Var loss(const ad::Var& x0_hat, std::size_t t, RandomStream& rng, LossTerms* terms = nullptr) const;

    const Options& options() const { return options_; }

private:
    Tensor x0_;
    Options options_;
    std::shared_ptr<const ScoreAdapter> model_;
    std::shared_ptr<const EmbedderAdapter> embedder_;
    std::shared_ptr<const PerceptualExtractor> extractor_;
    StyleTargets targets_;
};

} // namespace zecon
