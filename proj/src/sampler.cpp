#include "zecon/sampler.hpp"

#include "zecon/error.hpp"

#include <chrono>
#include <cmath>

namespace zecon {

std::string to_string(ForwardMode m) {
    return m == ForwardMode::ddim_deterministic ? "ddim_deterministic" : "ddpm_stochastic";
}
std::string to_string(ReverseMode m) { return m == ReverseMode::ddpm ? "ddpm" : "ddim"; }
std::string to_string(EpsMode m) { return m == EpsMode::reuse ? "reuse" : "rederive"; }

ForwardMode forward_mode_from_string(const std::string& s) {
    if (s == "ddim_deterministic" || s == "ddim") return ForwardMode::ddim_deterministic;
    if (s == "ddpm_stochastic" || s == "ddpm") return ForwardMode::ddpm_stochastic;
    throw ValidationError("sampler", "unknown forward_mode '" + s + "' (ddim_deterministic, ddpm_stochastic)");
}
ReverseMode reverse_mode_from_string(const std::string& s) {
    if (s == "ddpm") return ReverseMode::ddpm;
    if (s == "ddim") return ReverseMode::ddim;
    throw ValidationError("sampler", "unknown reverse_mode '" + s + "' (ddpm, ddim)");
}
EpsMode eps_mode_from_string(const std::string& s) {
    if (s == "reuse") return EpsMode::reuse;
    if (s == "rederive") return EpsMode::rederive;
    throw ValidationError("sampler", "unknown eps_mode '" + s + "' (reuse, rederive)");
}

void SamplerConfig::validate() const {
    if (respaced_steps < 1) throw ValidationError("sampler", "T_prime must be >= 1");
    if (t0_index < 0 || t0_index >= respaced_steps) {
        throw ValidationError("sampler", "t0 (" + std::to_string(t0_index) + ") must lie in [0, T_prime=" +
                                             std::to_string(respaced_steps) + ")");
    }
    if (!(eta >= 0.0)) throw ValidationError("sampler", "eta must be >= 0");
}

Tensor denoised_estimate(const Tensor& eps_pred, const Tensor& x_t, double alpha_bar) {
    require_same_shape(eps_pred, x_t, "denoised_estimate");
    if (!(alpha_bar > 0.0)) throw Error("sampler", "alpha_bar is 0: degenerate schedule");
    return axpby(1.0 / std::sqrt(alpha_bar), x_t, -std::sqrt(1.0 - alpha_bar) / std::sqrt(alpha_bar), eps_pred);
}

Tensor denoised_estimate(const Tensor& eps_pred, const Tensor& x_t, const RespacedSchedule& s, std::size_t k) {
    return denoised_estimate(eps_pred, x_t, s.alpha_bar(k));
}

Tensor apply_guidance(const Tensor& x0_hat, const Tensor& grad) {
    require_same_shape(x0_hat, grad, "apply_guidance");
    if (!grad.all_finite()) throw Error("sampler", "guidance gradient is not finite");
    return x0_hat + grad;
}

double reverse_sigma(const RespacedSchedule& s, std::size_t k, const SamplerConfig& cfg) {
    const double sigma = ddpm_sigma(s, k);
    return cfg.reverse_mode == ReverseMode::ddpm ? sigma : cfg.eta * sigma;
}

DiffusionState reverse_step(const RespacedSchedule& s, const DiffusionState& state, const Tensor& eps_pred,
                            const Tensor& x0_hat_guided, const SamplerConfig& cfg, const Tensor& noise) {
    if (state.k < 0 || static_cast<std::size_t>(state.k) >= s.steps()) {
        throw StepError(state.k, "index out of range");
    }
    require_same_shape(eps_pred, x0_hat_guided, "reverse_step");
    if (state.k == 0) return {x0_hat_guided, -1};

    const auto k = static_cast<std::size_t>(state.k);
    const double sigma = reverse_sigma(s, k, cfg);
    const double abar_prev = s.alpha_bar(k - 1);
    const double radicand = 1.0 - abar_prev - sigma * sigma;
    if (radicand < 0.0) {
        throw StepError(state.k, "negative radicand 1 - abar_prev - sigma^2 = " + std::to_string(radicand) +
                                     " (eta too large for this schedule)");
    }
    Tensor next = axpby(std::sqrt(abar_prev), x0_hat_guided, std::sqrt(radicand), eps_pred);
    if (sigma > 0.0) {
        require_same_shape(noise, eps_pred, "reverse_step noise");
        next = axpby(1.0, next, sigma, noise);
    }
    return {std::move(next), state.k - 1};
}

namespace {

Tensor predict(const ScoreAdapter& model, const Tensor& x, std::size_t t, int k) {
    Tensor eps;
    try {
        eps = model.predict_eps(x, t);
    } catch (const StepError&) {
        throw;
    } catch (const std::exception& e) {
        throw StepError(k, std::string("model '") + model.name() + "' failed: " + e.what());
    }
    if (!eps.same_shape(x)) throw StepError(k, "model returned shape " + shape_str(eps.shape()));
    if (!eps.all_finite()) throw StepError(k, "model returned non-finite noise prediction");
    return eps;
}

} // namespace

DiffusionState forward_encode(const Tensor& x0, const RespacedSchedule& s, const SamplerConfig& cfg,
                              const ScoreAdapter& model, RandomStream& rng) {
    cfg.validate();
    if (static_cast<std::size_t>(cfg.respaced_steps) != s.steps()) {
        throw ValidationError("sampler", "schedule has " + std::to_string(s.steps()) + " steps, config T_prime=" +
                                             std::to_string(cfg.respaced_steps));
    }
    if (cfg.forward_mode == ForwardMode::ddpm_stochastic) {
        const auto k = static_cast<std::size_t>(cfg.t0_index);
        return {forward_diffuse(s, x0, k, rng.normal(x0.shape())), cfg.t0_index};
    }
    Tensor x = x0;
    for (int k = 0; k < cfg.t0_index; ++k) {
        const auto kk = static_cast<std::size_t>(k);
        const Tensor eps = predict(model, x, s.timestep(kk), k);
        const Tensor x0_hat = denoised_estimate(eps, x, s, kk);
        const double abar_next = s.alpha_bar(kk + 1);
        x = axpby(std::sqrt(abar_next), x0_hat, std::sqrt(1.0 - abar_next), eps);
        if (!x.all_finite()) throw StepError(k, "non-finite latent during inversion");
    }
    return {std::move(x), cfg.t0_index};
}

SampleResult sample(const Tensor& x0, const RespacedSchedule& s, const SamplerConfig& cfg, const ScoreAdapter& model,
                    const GuidanceEvaluator& guidance, const RandomStream& rng) {
    cfg.validate();
    auto encode_rng = rng.derive("encode");
    auto noise_rng = rng.derive("noise");
    auto guidance_rng = rng.derive("guidance");

    SampleResult result;
    DiffusionState state = forward_encode(x0, s, cfg, model, encode_rng);
    result.latent = state.x;
    result.trace.reserve(static_cast<std::size_t>(cfg.t0_index) + 1);

    while (state.k >= 0) {
        const auto started = std::chrono::steady_clock::now();
        const auto k = static_cast<std::size_t>(state.k);
        StepRecord rec;
        rec.k = state.k;
        rec.t = s.timestep(k);

        Tensor eps = predict(model, state.x, rec.t, state.k);
        Tensor x0_hat = denoised_estimate(eps, state.x, s, k);
        if (guidance.active()) {
            GuidanceResult g;
            try {
                g = guidance.evaluate(x0_hat, rec.t, guidance_rng);
            } catch (const StepError&) {
                throw;
            } catch (const Error& e) {
                throw StepError(state.k, "guidance [" + e.component() + "] " + e.what());
            } catch (const std::exception& e) {
                throw StepError(state.k, std::string("guidance failed: ") + e.what());
            }
            if (!g.grad.all_finite()) throw StepError(state.k, "guidance gradient is not finite");
            x0_hat = apply_guidance(x0_hat, g.grad);
            rec.loss = g.loss;
            rec.terms = std::move(g.terms);
            rec.grad_norm = l2_norm(g.grad);
            if (cfg.eps_mode == EpsMode::rederive) {
                const double abar = s.alpha_bar(k);
                eps = axpby(1.0 / std::sqrt(1.0 - abar), state.x, -std::sqrt(abar) / std::sqrt(1.0 - abar), x0_hat);
            }
        }
        Tensor noise;
        if (state.k > 0 && reverse_sigma(s, k, cfg) > 0.0) noise = noise_rng.normal(state.x.shape());
        state = reverse_step(s, state, eps, x0_hat, cfg, noise);
        if (!state.x.all_finite()) throw StepError(rec.k, "non-finite latent");

        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        result.trace.push_back(std::move(rec));
    }
    result.image = clamp(std::move(state.x), -1.0, 1.0);
    return result;
}

} // namespace zecon
