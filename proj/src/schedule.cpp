#include "zecon/schedule.hpp"

#include "zecon/error.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace zecon {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.empty()) throw ValidationError("schedule", "schedule needs at least one step");
    alphas_.reserve(betas_.size());
    alpha_bars_.reserve(betas_.size());
    double prod = 1.0;
    for (std::size_t t = 0; t < betas_.size(); ++t) {
        const double b = betas_[t];
        if (!(b > 0.0 && b < 1.0)) {
            throw ValidationError("schedule", "beta[" + std::to_string(t) + "] = " + std::to_string(b) +
                                                  " outside (0, 1)");
        }
        alphas_.push_back(1.0 - b);
        prod *= 1.0 - b;
        alpha_bars_.push_back(prod);
    }
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
    if (t >= alpha_bars_.size()) {
        throw Error("schedule", "timestep " + std::to_string(t) + " out of range [0, " +
                                    std::to_string(alpha_bars_.size()) + ")");
    }
    return alpha_bars_[t];
}

NoiseSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
    if (steps < 2) throw ValidationError("schedule", "T must be >= 2, got " + std::to_string(steps));
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
        throw ValidationError("schedule", "need 0 < beta_start <= beta_end < 1");
    }
    std::vector<double> betas(static_cast<std::size_t>(steps));
    const double span = beta_end - beta_start;
    for (int t = 0; t < steps; ++t) {
        betas[static_cast<std::size_t>(t)] = beta_start + span * t / (steps - 1);
    }
    betas.back() = beta_end;
    return NoiseSchedule(std::move(betas));
}

namespace {

std::vector<std::size_t> uniform_indices(std::size_t base_steps, int respaced_steps) {
    if (respaced_steps < 1 || static_cast<std::size_t>(respaced_steps) > base_steps) {
        throw ValidationError("schedule", "T' must lie in [1, " + std::to_string(base_steps) + "], got " +
                                              std::to_string(respaced_steps));
    }
    const auto n = static_cast<std::size_t>(respaced_steps);
    std::vector<std::size_t> idx(n);
    for (std::size_t k = 0; k < n; ++k) idx[k] = k * base_steps / n;
    return idx;
}

std::vector<double> respaced_betas(const NoiseSchedule& base, const std::vector<std::size_t>& idx) {
    if (idx.size() == base.steps()) return base.betas();
    std::vector<double> betas(idx.size());
    double prev = 1.0;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const double ab = base.alpha_bar(idx[k]);
        betas[k] = 1.0 - ab / prev;
        prev = ab;
    }
    return betas;
}

} // namespace

RespacedSchedule::RespacedSchedule(NoiseSchedule base, int respaced_steps)
    : base_(std::move(base)),
      index_map_(uniform_indices(base_.steps(), respaced_steps)),
      respaced_(respaced_betas(base_, index_map_)) {}

RespacedSchedule respace(const NoiseSchedule& s, int respaced_steps) {
    return RespacedSchedule(s, respaced_steps);
}

namespace {

Tensor diffuse(double alpha_bar, const Tensor& x0, const Tensor& eps) {
    require_same_shape(x0, eps, "schedule.forward_diffuse");
    return axpby(std::sqrt(alpha_bar), x0, std::sqrt(1.0 - alpha_bar), eps);
}

double sigma_from(double ab_prev, double ab) {
    return std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
}

} // namespace

Tensor forward_diffuse(const NoiseSchedule& s, const Tensor& x0, std::size_t t, const Tensor& eps) {
    return diffuse(s.alpha_bar(t), x0, eps);
}

Tensor forward_diffuse(const RespacedSchedule& s, const Tensor& x0, std::size_t k, const Tensor& eps) {
    return diffuse(s.alpha_bar(k), x0, eps);
}

double ddpm_sigma(const NoiseSchedule& s, std::size_t t) {
    const double ab = s.alpha_bar(t);
    if (t == 0) return 0.0;
    return sigma_from(s.alpha_bar(t - 1), ab);
}

double ddpm_sigma(const RespacedSchedule& s, std::size_t k) {
    const double ab = s.alpha_bar(k);
    if (k == 0) return 0.0;
    return sigma_from(s.alpha_bar(k - 1), ab);
}

RespacedSchedule ScheduleSpec::build() const {
    return respace(make_linear_schedule(steps, beta_start, beta_end), respaced_steps);
}

std::string ScheduleSpec::to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "T = " << steps << '\n'
       << "beta_start = " << beta_start << '\n'
       << "beta_end = " << beta_end << '\n'
       << "T_prime = " << respaced_steps << '\n';
    return os.str();
}

ScheduleSpec ScheduleSpec::from_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("schedule", "line " + std::to_string(lineno) + ": expected key = value");
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }

    ScheduleSpec spec;
    auto take = [&](const char* key, auto& field) {
        auto it = kv.find(key);
        if (it == kv.end()) return;
        std::istringstream vs(it->second);
        if (!(vs >> field) || !(vs >> std::ws).eof()) {
            throw ValidationError("schedule", std::string("bad value for ") + key + ": '" + it->second + "'");
        }
        kv.erase(it);
    };
    take("T", spec.steps);
    take("beta_start", spec.beta_start);
    take("beta_end", spec.beta_end);
    take("T_prime", spec.respaced_steps);
    if (!kv.empty()) throw ValidationError("schedule", "unknown key '" + kv.begin()->first + "'");
    spec.build(); // validates
    return spec;
}

void ScheduleSpec::save(const std::filesystem::path& path) const {
    std::ofstream os(path);
    if (!os) throw Error("schedule", "cannot write " + path.string());
    os << to_text();
}

ScheduleSpec ScheduleSpec::load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("schedule", "cannot read " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return from_text(ss.str());
}

} // namespace zecon
