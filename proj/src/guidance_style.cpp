#include "zecon/guidance_style.hpp"

#include "zecon/error.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numbers>

namespace zecon {

PatchPolicy PatchPolicy::whole_image() {
    PatchPolicy p;
    p.n_patches = 1;
    p.min_frac = 1.0;
    p.max_frac = 1.0;
    p.augment = false;
    return p;
}

bool PatchPolicy::is_whole_image() const {
    return n_patches == 1 && min_frac == 1.0 && max_frac == 1.0 && !augment;
}

void PatchPolicy::validate() const {
    if (n_patches < 1) throw ValidationError("guidance_style", "n_patches must be >= 1");
    if (!(min_frac > 0.0 && min_frac <= max_frac && max_frac <= 1.0)) {
        throw ValidationError("guidance_style", "patch scale range must satisfy 0 < min <= max <= 1");
    }
    if (distortion_scale < 0.0 || distortion_scale > 1.0) {
        throw ValidationError("guidance_style", "distortion_scale must lie in [0, 1]");
    }
    if (max_rotation_deg < 0.0) throw ValidationError("guidance_style", "max_rotation_deg must be >= 0");
}

void PatchPolicy::validate_for(std::size_t image_side) const {
    validate();
    if (min_frac * static_cast<double>(image_side) < 1.0) {
        throw ValidationError("guidance_style", "smallest crop (" + std::to_string(min_frac) + " x " +
                                                    std::to_string(image_side) + " px) is below one pixel");
    }
}

namespace {

using Homography = Eigen::Matrix3d;

/// Projective map taking each `from` corner onto the matching `to` corner.
Homography fit_homography(const std::array<double, 8>& from, const std::array<double, 8>& to) {
    Eigen::Matrix<double, 8, 8> A;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const double x = from[2 * i], y = from[2 * i + 1];
        const double X = to[2 * i], Y = to[2 * i + 1];
        A.row(2 * i) << x, y, 1, 0, 0, 0, -x * X, -y * X;
        A.row(2 * i + 1) << 0, 0, 0, x, y, 1, -x * Y, -y * Y;
        b(2 * i) = X;
        b(2 * i + 1) = Y;
    }
    Eigen::Matrix<double, 8, 1> h = A.fullPivLu().solve(b);
    Homography H;
    H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), 1.0;
    return H;
}

} // namespace

PatchPlan plan_patches(std::size_t image_side, const PatchPolicy& policy, std::size_t out_size, RandomStream& rng) {
    policy.validate_for(image_side);
    if (out_size < 1) throw ValidationError("guidance_style", "patch output size must be >= 1");
    const double S = static_cast<double>(image_side);
    const double R = static_cast<double>(out_size);
    PatchPlan plan;
    plan.maps.reserve(policy.n_patches);
    plan.geometry.reserve(policy.n_patches);

    for (std::size_t n = 0; n < policy.n_patches; ++n) {
        PatchGeometry g;
        g.crop_frac = policy.min_frac == policy.max_frac ? policy.min_frac : rng.uniform(policy.min_frac, policy.max_frac);
        g.side = g.crop_frac * S;
        g.left = S - g.side > 0 ? rng.uniform(0.0, S - g.side) : 0.0;
        g.top = S - g.side > 0 ? rng.uniform(0.0, S - g.side) : 0.0;
        const double s = g.side;
        const std::array<double, 8> corners{0, 0, s, 0, s, s, 0, s};
        g.perspective_end = corners;

        Homography to_crop = Homography::Identity();
        double cos_r = 1.0, sin_r = 0.0;
        if (policy.augment) {
            const double jitter = policy.distortion_scale * s / 2.0;
            auto j = [&] { return jitter > 0 ? rng.uniform(0.0, jitter) : 0.0; };
            // corners move inward: TL(+,+) TR(-,+) BR(-,-) BL(+,-)
            const double sign[8] = {1, 1, -1, 1, -1, -1, 1, -1};
            for (int i = 0; i < 8; ++i) g.perspective_end[i] = corners[i] + sign[i] * j();
            to_crop = fit_homography(g.perspective_end, corners);
            g.rotation_deg = policy.max_rotation_deg > 0 ? rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg) : 0.0;
            const double a = g.rotation_deg * std::numbers::pi / 180.0;
            cos_r = std::cos(a);
            sin_r = std::sin(a);
        }

        std::vector<double> sx(out_size * out_size), sy(out_size * out_size);
        const double c = s / 2.0;
        for (std::size_t v = 0; v < out_size; ++v) {
            for (std::size_t u = 0; u < out_size; ++u) {
                // output pixel centre in crop-local coordinates
                const double px = (static_cast<double>(u) + 0.5) * s / R;
                const double py = (static_cast<double>(v) + 0.5) * s / R;
                // undo the rotation about the crop centre
                const double rx = c + cos_r * (px - c) + sin_r * (py - c);
                const double ry = c - sin_r * (px - c) + cos_r * (py - c);
                // undo the perspective warp
                const Eigen::Vector3d q = to_crop * Eigen::Vector3d(rx, ry, 1.0);
                double qx = q.x() / q.z(), qy = q.y() / q.z();
                const std::size_t i = v * out_size + u;
                if (qx < 0.0 || qy < 0.0 || qx > s || qy > s) {
                    // outside the crop: filled with zeros
                    sx[i] = -1e9;
                    sy[i] = -1e9;
                    continue;
                }
                sx[i] = std::clamp(g.left + qx, 0.5, S - 0.5);
                sy[i] = std::clamp(g.top + qy, 0.5, S - 0.5);
            }
        }
        plan.maps.push_back(ad::SampleMap::from_coords(image_side, image_side, out_size, out_size, sx, sy));
        plan.geometry.push_back(g);
    }
    return plan;
}

std::vector<ad::Var> crop_and_augment(const ad::Var& image, const PatchPolicy& policy, std::size_t out_size,
                                      RandomStream& rng, std::vector<PatchGeometry>* geometry) {
    const auto& shape = image.shape();
    if (shape.size() != 3 || shape[1] != shape[2]) {
        throw Error("guidance_style", "crop_and_augment needs a square [C,H,W] image, got " + shape_str(shape));
    }
    auto plan = plan_patches(shape[1], policy, out_size, rng);
    std::vector<ad::Var> patches;
    patches.reserve(plan.maps.size());
    for (const auto& m : plan.maps) patches.push_back(ad::resample(image, m));
    if (geometry) *geometry = std::move(plan.geometry);
    return patches;
}

namespace {

ad::Var batch_mean(std::vector<ad::Var> terms) {
    if (terms.empty()) throw Error("guidance_style", "empty patch batch");
    ad::Var total = terms.front();
    for (std::size_t i = 1; i < terms.size(); ++i) total = ad::add(total, terms[i]);
    return ad::scale(total, 1.0 / static_cast<double>(terms.size()));
}

Tensor unit_vector(const Tensor& v, const char* what) {
    const double n = l2_norm(v);
    if (n == 0.0) throw Error("guidance_style", std::string(what) + " has zero length");
    return v * (1.0 / n);
}

} // namespace

ad::Var global_clip_loss(const std::vector<ad::Var>& batch, const Tensor& text_embedding,
                         const EmbedderAdapter& embedder) {
    if (batch.empty()) throw Error("guidance_style", "global loss on an empty batch");
    const auto text = ad::Var::constant(unit_vector(text_embedding, "target text embedding"));
    const auto one = ad::Var::constant(Tensor({1}, {1.0}));
    std::vector<ad::Var> terms;
    for (const auto& x : batch) {
        auto e = ad::normalize_rows(embedder.embed_image(x));
        terms.push_back(ad::sub(one, ad::row_dot(e, text)));
    }
    return ad::reshape(batch_mean(std::move(terms)), {});
}

ad::Var global_clip_loss(const std::vector<ad::Var>& batch, const std::string& target, const EmbedderAdapter& embedder) {
    return global_clip_loss(batch, embedder.embed_text(target), embedder);
}

ad::Var directional_clip_loss(const std::vector<ad::Var>& batch, const Tensor& source_image_embedding,
                              const Tensor& text_direction, const EmbedderAdapter& embedder) {
    if (batch.empty()) throw Error("guidance_style", "directional loss on an empty batch");
    const auto dir_t = ad::Var::constant(unit_vector(text_direction, "text direction dT"));
    const auto src = ad::Var::constant(source_image_embedding);
    const auto one = ad::Var::constant(Tensor({1}, {1.0}));
    std::vector<ad::Var> terms;
    for (const auto& x : batch) {
        auto delta_i = ad::sub(src, ad::normalize_rows(embedder.embed_image(x)));
        if (l2_norm(delta_i.value()) == 0.0) throw Error("guidance_style", "image direction dI has zero length");
        terms.push_back(ad::sub(one, ad::row_dot(ad::normalize_rows(delta_i), dir_t)));
    }
    return ad::reshape(batch_mean(std::move(terms)), {});
}

ad::Var directional_clip_loss(const std::vector<ad::Var>& batch, const Tensor& x0, const PromptPair& prompts,
                              const EmbedderAdapter& embedder) {
    if (prompts.source.empty() || prompts.target.empty()) {
        throw Error("guidance_style", "directional loss needs both source and target prompts");
    }
    const Tensor dt = embedder.embed_text(prompts.source) - embedder.embed_text(prompts.target);
    return directional_clip_loss(batch, embedder.embed_image(x0), dt, embedder);
}

StyleTargets StyleTargets::compute(const Tensor& x0, const PromptPair& prompts, const EmbedderAdapter& embedder) {
    if (prompts.target.empty()) throw ValidationError("guidance_style", "target prompt must not be empty");
    StyleTargets t;
    t.target_text = embedder.embed_text(prompts.target);
    if (!prompts.source.empty()) t.text_direction = embedder.embed_text(prompts.source) - t.target_text;
    t.source_image = embedder.embed_image(x0);
    return t;
}

ad::Var style_loss(const ad::Var& x_hat, const StyleTargets& targets, const PatchPolicy& policy,
                   const StyleWeights& weights, const EmbedderAdapter& embedder, RandomStream& rng,
                   LossTerms* terms) {
    if (weights.global < 0 || weights.dir < 0) throw ValidationError("guidance_style", "style weights must be >= 0");
    if (weights.global == 0 && weights.dir == 0) return ad::Var::constant(Tensor::scalar(0.0));
    if (weights.dir > 0 && targets.text_direction.empty()) {
        throw Error("style.dir", "directional loss needs a source prompt");
    }
    auto patches = crop_and_augment(x_hat, policy, embedder.input_size(), rng);

    ad::Var total;
    auto accumulate = [&](const char* name, double w, ad::Var term) {
        if (terms) terms->add(name, term.value().item());
        auto weighted = ad::scale(term, w);
        total = total.defined() ? ad::add(total, weighted) : weighted;
    };
    try {
        if (weights.global > 0) accumulate("global", weights.global, global_clip_loss(patches, targets.target_text, embedder));
    } catch (const std::exception& e) {
        throw Error("style.global", e.what());
    }
    try {
        if (weights.dir > 0) {
            accumulate("dir", weights.dir,
                       directional_clip_loss(patches, targets.source_image, targets.text_direction, embedder));
        }
    } catch (const std::exception& e) {
        throw Error("style.dir", e.what());
    }
    return total;
}

ad::Var style_loss(const ad::Var& x_hat, const Tensor& x0, const PromptPair& prompts, const PatchPolicy& policy,
                   const StyleWeights& weights, const EmbedderAdapter& embedder, RandomStream& rng,
                   LossTerms* terms) {
    if (weights.global == 0 && weights.dir == 0) return ad::Var::constant(Tensor::scalar(0.0));
    return style_loss(x_hat, StyleTargets::compute(x0, prompts, embedder), policy, weights, embedder, rng, terms);
}

} // namespace zecon
