#include "zecon/guidance.hpp"

#include "zecon/error.hpp"

namespace zecon {

GuidanceResult NullGuidance::evaluate(const Tensor& x0_hat, std::size_t, RandomStream&) const {
    return {0.0, Tensor::zeros_like(x0_hat), {}};
}

ZeconGuidance::ZeconGuidance(Tensor x0, Options options, std::shared_ptr<const ScoreAdapter> model,
                             std::shared_ptr<const EmbedderAdapter> embedder,
                             std::shared_ptr<const PerceptualExtractor> extractor)
    : x0_(std::move(x0)), options_(std::move(options)), model_(std::move(model)), embedder_(std::move(embedder)),
      extractor_(std::move(extractor)) {
    const auto& w = options_.weights;
    if (w.global < 0 || w.dir < 0 || w.zecon < 0 || w.mse < 0 || w.vgg < 0) {
        throw ValidationError("guidance", "weights must be >= 0");
    }
    if (!model_) throw ValidationError("guidance", "no score adapter bound");
    if (w.zecon > 0) {
        if (!model_->has_encoder_features()) {
            throw ValidationError("guidance", "score adapter '" + model_->name() + "' lacks encoder features");
        }
        options_.contrastive.validate();
    }
    if (w.vgg > 0 && !extractor_) throw ValidationError("guidance", "perceptual term needs an extractor");
    if (w.global > 0 || w.dir > 0) {
        if (!embedder_) throw ValidationError("guidance", "style terms need an embedder");
        if (w.dir > 0 && options_.prompts.source.empty()) {
            throw ValidationError("guidance", "directional term needs a source prompt");
        }
        options_.patches.validate_for(x0_.dim(1));
        targets_ = StyleTargets::compute(x0_, options_.prompts, *embedder_);
    }
}

ad::Var ZeconGuidance::loss(const ad::Var& x0_hat, std::size_t t, RandomStream& rng, LossTerms* terms) const {
    const auto& w = options_.weights;
    ad::Var total = content_loss(x0_hat, x0_, *model_, t, w.content(), options_.contrastive, extractor_.get(),
                                 rng, terms);
    if (w.global > 0 || w.dir > 0) {
        total = ad::add(total, style_loss(x0_hat, targets_, options_.patches, w.style(), *embedder_, rng, terms));
    }
    return total;
}

GuidanceResult ZeconGuidance::evaluate(const Tensor& x0_hat, std::size_t t, RandomStream& rng) const {
    if (!active()) return {0.0, Tensor::zeros_like(x0_hat), {}};
    auto x = ad::Var::parameter(x0_hat);
    GuidanceResult r;
    auto l = loss(x, t, rng, &r.terms);
    r.loss = l.value().item();
    if (l.requires_grad()) {
        ad::backward(l);
        r.grad = x.grad() * -1.0;
    } else {
        r.grad = Tensor::zeros_like(x0_hat);
    }
    return r;
}

} // namespace zecon
