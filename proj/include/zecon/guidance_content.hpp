#pragma once

#include "zecon/autodiff.hpp"
#include "zecon/models.hpp"
#include "zecon/random.hpp"

#include <span>
#include <string>
#include <vector>

namespace zecon {

/// Which encoder layers feed the patch-wise contrastive term and how.
struct ContrastiveConfig {
    std::vector<std::string> layer_ids{"enc0", "enc1", "enc2"};
    std::size_t locations_per_layer = 256;
    double temperature = 0.07;

    void validate() const;
};

/// Patch-wise cross-entropy for one query:
/// -log( e^{v.v+/tau} / (e^{v.v+/tau} + sum_i e^{v.v-_i/tau}) ),
/// evaluated with log-sum-exp after L2-normalising every vector.
double infonce(std::span<const double> query, std::span<const double> positive,
               const std::vector<std::span<const double>>& negatives, double tau);

/// Per-layer spatial positions drawn for one evaluation (shared by both images).
struct SampledPositions {
    std::vector<std::vector<std::size_t>> per_layer;
};

/// Contrastive content loss between the encoder features of `x0_hat` and `x0`
/// at timestep `t`. For each layer, `locations_per_layer` positions (or all of
/// them when the map is smaller) are drawn once; every query at position s from
/// `x0_hat` has its positive at s in `x0` and its negatives at the other drawn
/// positions of `x0`. Returns the sum over layers and positions.
ad::Var zecon_loss(const ad::Var& x0_hat, const Tensor& x0, const ScoreAdapter& model, std::size_t t,
                   const ContrastiveConfig& cfg, RandomStream& rng, SampledPositions* positions = nullptr);
double zecon_loss(const Tensor& x0_hat, const Tensor& x0, const ScoreAdapter& model, std::size_t t,
                  const ContrastiveConfig& cfg, RandomStream& rng);

/// Mean-squared error between extractor features, averaged over its layers.
ad::Var perceptual_loss(const ad::Var& x0_hat, const Tensor& x0, const PerceptualExtractor& extractor);
double perceptual_loss(const Tensor& x0_hat, const Tensor& x0, const PerceptualExtractor& extractor);

/// Mean of squared pixel differences.
ad::Var pixel_loss(const ad::Var& x0_hat, const Tensor& x0);
double pixel_loss(const Tensor& x0_hat, const Tensor& x0);

struct ContentWeights {
    double zecon = 0.0;
    double vgg = 0.0;
    double mse = 0.0;
};

/// Named values of each evaluated term, unweighted.
struct LossTerms {
    std::vector<std::pair<std::string, double>> values;
    void add(std::string name, double v) { values.emplace_back(std::move(name), v); }
    double get(const std::string& name) const;
};

/// Weighted content loss  w_zecon * zecon + w_vgg * perceptual + w_mse * pixel.
/// Terms with zero weight are not evaluated. `extractor` may be null when w_vgg = 0.
ad::Var content_loss(const ad::Var& x0_hat, const Tensor& x0, const ScoreAdapter& model, std::size_t t,
                     const ContentWeights& weights, const ContrastiveConfig& cfg,
                     const PerceptualExtractor* extractor, RandomStream& rng, LossTerms* terms = nullptr);

} // namespace zecon
