#pragma once

#include "zecon/tensor.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace zecon {

/// Discrete-time variance schedule: beta_t, alpha_t = 1 - beta_t and the
/// cumulative products alpha_bar_t. Immutable after construction.
class NoiseSchedule {
public:
    /// Builds a schedule from explicit betas; every beta must lie in (0, 1).
    explicit NoiseSchedule(std::vector<double> betas);

    std::size_t steps() const { return betas_.size(); }
    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }
    double alpha_bar(std::size_t t) const;

private:
    std::vector<double> betas_;
    std::vector<double> alphas_;
    std::vector<double> alpha_bars_;
};

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end);

/// A uniformly strided subsequence of a base schedule whose betas are
/// recomputed so that the cumulative products at the kept steps are unchanged.
class RespacedSchedule {
public:
    RespacedSchedule(NoiseSchedule base, int respaced_steps);

    const NoiseSchedule& base() const { return base_; }
    const NoiseSchedule& schedule() const { return respaced_; }
    std::size_t steps() const { return index_map_.size(); }
    /// Base timestep fed to the noise predictor for respaced index k.
    std::size_t timestep(std::size_t k) const { return index_map_.at(k); }
    const std::vector<std::size_t>& index_map() const { return index_map_; }
    const std::vector<double>& betas() const { return respaced_.betas(); }
    /// Exact base alpha_bar at the mapped step; the respaced betas reproduce it to rounding.
    double alpha_bar(std::size_t k) const { return base_.alpha_bar(index_map_.at(k)); }

private:
    NoiseSchedule base_;
    std::vector<std::size_t> index_map_;
    NoiseSchedule respaced_;
};

RespacedSchedule respace(const NoiseSchedule& s, int respaced_steps);

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps
Tensor forward_diffuse(const NoiseSchedule& s, const Tensor& x0, std::size_t t, const Tensor& eps);
Tensor forward_diffuse(const RespacedSchedule& s, const Tensor& x0, std::size_t k, const Tensor& eps);

/// Posterior standard deviation of the ancestral (DDPM) step written in DDIM form:
/// sqrt((1 - abar_{t-1}) / (1 - abar_t)) * sqrt(1 - abar_t / abar_{t-1}); zero at t = 0.
double ddpm_sigma(const NoiseSchedule& s, std::size_t t);
double ddpm_sigma(const RespacedSchedule& s, std::size_t k);

/// Reproducibility record: `T`, `beta_start`, `beta_end`, `T_prime` as `key = value` lines.
struct ScheduleSpec {
    int steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int respaced_steps = 50;

    RespacedSchedule build() const;
    std::string to_text() const;
    static ScheduleSpec from_text(const std::string& text);
    void save(const std::filesystem::path& path) const;
    static ScheduleSpec load(const std::filesystem::path& path);

    friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;
};

} // namespace zecon
