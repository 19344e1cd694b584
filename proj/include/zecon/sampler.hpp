#pragma once

#include "zecon/guidance.hpp"
#include "zecon/models.hpp"
#include "zecon/random.hpp"
#include "zecon/schedule.hpp"

#include <string>
#include <vector>

namespace zecon {

enum class ForwardMode { ddim_deterministic, ddpm_stochastic };
enum class ReverseMode { ddpm, ddim };
/// Which noise prediction enters the reverse update after guidance moved x0_hat.
enum class EpsMode { reuse, rederive };

std::string to_string(ForwardMode m);
std::string to_string(ReverseMode m);
std::string to_string(EpsMode m);
ForwardMode forward_mode_from_string(const std::string& s);
ReverseMode reverse_mode_from_string(const std::string& s);
EpsMode eps_mode_from_string(const std::string& s);

struct SamplerConfig {
    ForwardMode forward_mode = ForwardMode::ddim_deterministic;
    ReverseMode reverse_mode = ReverseMode::ddpm;
    double eta = 0.0;
    int t0_index = 25;
    int respaced_steps = 50;
    EpsMode eps_mode = EpsMode::reuse;

    void validate() const;
    friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;
};

/// Latent at respaced index k. k = -1 marks a finished (clean) sample.
struct DiffusionState {
    Tensor x;
    int k = 0;
};

/// (x_t - sqrt(1 - abar) eps) / sqrt(abar)
Tensor denoised_estimate(const Tensor& eps_pred, const Tensor& x_t, double alpha_bar);
Tensor denoised_estimate(const Tensor& eps_pred, const Tensor& x_t, const RespacedSchedule& s, std::size_t k);

/// x0_hat + grad, where grad is already descent-signed.
Tensor apply_guidance(const Tensor& x0_hat, const Tensor& grad);

/// Noise scale of the reverse update at index k for the configured mode.
double reverse_sigma(const RespacedSchedule& s, std::size_t k, const SamplerConfig& cfg);

/// One reverse update from state.k to state.k - 1. At k = 0 the guided
/// estimate itself is emitted and `noise` is ignored.
DiffusionState reverse_step(const RespacedSchedule& s, const DiffusionState& state, const Tensor& eps_pred,
                            const Tensor& x0_hat_guided, const SamplerConfig& cfg, const Tensor& noise);

/// Brings x0 to index cfg.t0_index, either by deterministic inversion through
/// the model or by one draw of the closed-form forward process.
DiffusionState forward_encode(const Tensor& x0, const RespacedSchedule& s, const SamplerConfig& cfg,
                              const ScoreAdapter& model, RandomStream& rng);

struct StepRecord {
    int k = 0;
    std::size_t t = 0;      ///< base timestep fed to the model
    double loss = 0.0;      ///< weighted guidance loss
    LossTerms terms;
    double grad_norm = 0.0;
    double seconds = 0.0;
};

struct SampleResult {
    Tensor image;           ///< clamped to [-1, 1]
    Tensor latent;          ///< x at t0 after forward encoding
    std::vector<StepRecord> trace;
};

/// Forward encoding then the guided reverse loop from t0 down to 0.
/// The rng is split into independent "encode", "noise" and "guidance" streams.
SampleResult sample(const Tensor& x0, const RespacedSchedule& s, const SamplerConfig& cfg, const ScoreAdapter& model,
                    const GuidanceEvaluator& guidance, const RandomStream& rng);

} // namespace zecon
