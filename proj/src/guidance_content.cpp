#include "zecon/guidance_content.hpp"

#include "zecon/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace zecon {

void ContrastiveConfig::validate() const {
    if (!(temperature > 0.0)) throw ValidationError("guidance_content", "temperature must be > 0");
    if (locations_per_layer < 2) throw ValidationError("guidance_content", "locations_per_layer must be >= 2");
    if (layer_ids.empty()) throw ValidationError("guidance_content", "no contrastive layers configured");
}

double LossTerms::get(const std::string& name) const {
    for (const auto& [n, v] : values)
        if (n == name) return v;
    return 0.0;
}

namespace {

std::vector<double> unit(std::span<const double> v, const char* what) {
    double s = 0.0;
    for (double x : v) s += x * x;
    const double n = std::sqrt(s);
    if (n == 0.0) throw Error("guidance_content", std::string("infonce: zero-norm ") + what + " vector");
    std::vector<double> out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

double dotp(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace

double infonce(std::span<const double> query, std::span<const double> positive,
               const std::vector<std::span<const double>>& negatives, double tau) {
    if (!(tau > 0.0)) throw Error("guidance_content", "infonce: tau must be > 0");
    if (negatives.empty()) throw Error("guidance_content", "infonce: need at least one negative");
    if (positive.size() != query.size()) throw Error("guidance_content", "infonce: dimension mismatch");
    const auto q = unit(query, "query");
    std::vector<double> logits;
    logits.push_back(dotp(q, unit(positive, "positive")) / tau);
    for (const auto& n : negatives) {
        if (n.size() != query.size()) throw Error("guidance_content", "infonce: dimension mismatch");
        logits.push_back(dotp(q, unit(n, "negative")) / tau);
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    return mx + std::log(z) - logits[0];
}

ad::Var zecon_loss(const ad::Var& x0_hat, const Tensor& x0, const ScoreAdapter& model, std::size_t t,
                   const ContrastiveConfig& cfg, RandomStream& rng, SampledPositions* positions) {
    cfg.validate();
    require_same_shape(x0_hat.value(), x0, "guidance_content.zecon");
    if (!model.has_encoder_features()) {
        throw Error("guidance_content", "score adapter '" + model.name() + "' lacks encoder features");
    }
    auto query_stack = model.encoder_features(x0_hat, t, cfg.layer_ids);
    auto ref_stack = model.encoder_features(ad::Var::constant(x0), t, cfg.layer_ids);
    if (query_stack.size() != cfg.layer_ids.size() || ref_stack.size() != cfg.layer_ids.size()) {
        throw Error("guidance_content", "adapter returned an incomplete feature stack");
    }

    // Each layer draws from its own stream keyed by layer id, so the result
    // does not depend on the order layers are listed in.
    const auto base = static_cast<std::uint64_t>(rng.engine()());
    if (positions) positions->per_layer.clear();

    ad::Var total;
    for (std::size_t l = 0; l < cfg.layer_ids.size(); ++l) {
        const auto& zq = query_stack[l].features;
        const auto& zr = ref_stack[l].features;
        const auto& shape = zq.shape();
        if (shape.size() != 3 || !zq.value().same_shape(zr.value())) {
            throw Error("guidance_content", "layer '" + cfg.layer_ids[l] + "' has inconsistent feature shapes");
        }
        const std::size_t locations = shape[1] * shape[2];
        const std::size_t count = std::min(cfg.locations_per_layer, locations);
        if (count < 2) {
            throw Error("guidance_content", "layer '" + cfg.layer_ids[l] + "' has fewer than 2 spatial locations");
        }
        RandomStream layer_rng(base, cfg.layer_ids[l]);
        auto pos = layer_rng.sample_without_replacement(locations, count);
        auto q = ad::normalize_rows(ad::gather_positions(zq, pos), 1e-12);
        auto k = ad::normalize_rows(ad::gather_positions(zr, pos), 1e-12);
        auto term = ad::patch_nce(q, k, cfg.temperature);
        total = total.defined() ? ad::add(total, term) : term;
        if (positions) positions->per_layer.push_back(std::move(pos));
    }
    return total;
}

double zecon_loss(const Tensor& x0_hat, const Tensor& x0, const ScoreAdapter& model, std::size_t t,
                  const ContrastiveConfig& cfg, RandomStream& rng) {
    return zecon_loss(ad::Var::constant(x0_hat), x0, model, t, cfg, rng).value().item();
}

ad::Var perceptual_loss(const ad::Var& x0_hat, const Tensor& x0, const PerceptualExtractor& extractor) {
    require_same_shape(x0_hat.value(), x0, "guidance_content.perceptual");
    auto fq = extractor.features(x0_hat);
    auto fr = extractor.features(ad::Var::constant(x0));
    if (fq.empty() || fq.size() != fr.size()) {
        throw Error("guidance_content", "extractor '" + extractor.name() + "' returned no features");
    }
    ad::Var total;
    for (std::size_t l = 0; l < fq.size(); ++l) {
        auto term = ad::mse(fq[l], ad::Var::constant(fr[l].value()));
        total = total.defined() ? ad::add(total, term) : term;
    }
    return ad::scale(total, 1.0 / static_cast<double>(fq.size()));
}

double perceptual_loss(const Tensor& x0_hat, const Tensor& x0, const PerceptualExtractor& extractor) {
    return perceptual_loss(ad::Var::constant(x0_hat), x0, extractor).value().item();
}

ad::Var pixel_loss(const ad::Var& x0_hat, const Tensor& x0) {
    require_same_shape(x0_hat.value(), x0, "guidance_content.pixel");
    return ad::mse(x0_hat, ad::Var::constant(x0));
}

double pixel_loss(const Tensor& x0_hat, const Tensor& x0) {
    return pixel_loss(ad::Var::constant(x0_hat), x0).value().item();
}

namespace {

template <class F>
ad::Var component(const char* name, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        throw Error(std::string("content.") + name, e.what());
    } catch (const std::exception& e) {
        throw Error(std::string("content.") + name, e.what());
    }
}

} // namespace

ad::Var content_loss(const ad::Var& x0_hat, const Tensor& x0, const ScoreAdapter& model, std::size_t t,
                     const ContentWeights& weights, const ContrastiveConfig& cfg,
                     const PerceptualExtractor* extractor, RandomStream& rng, LossTerms* terms) {
    if (weights.zecon < 0 || weights.vgg < 0 || weights.mse < 0) {
        throw ValidationError("guidance_content", "content weights must be >= 0");
    }
    ad::Var total;
    auto accumulate = [&](const char* name, double w, ad::Var term) {
        if (terms) terms->add(name, term.value().item());
        auto weighted = ad::scale(term, w);
        total = total.defined() ? ad::add(total, weighted) : weighted;
    };
    if (weights.zecon > 0) {
        accumulate("zecon", weights.zecon, component("zecon", [&] { return zecon_loss(x0_hat, x0, model, t, cfg, rng); }));
    }
    if (weights.vgg > 0) {
        if (!extractor) throw Error("content.vgg", "no perceptual extractor configured");
        accumulate("vgg", weights.vgg, component("vgg", [&] { return perceptual_loss(x0_hat, x0, *extractor); }));
    }
    if (weights.mse > 0) {
        accumulate("mse", weights.mse, component("mse", [&] { return pixel_loss(x0_hat, x0); }));
    }
    if (!total.defined()) total = ad::Var::constant(Tensor::scalar(0.0));
    return total;
}

} // namespace zecon
