#pragma once

#include "zecon/autodiff.hpp"
#include "zecon/random.hpp"
#include "zecon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

namespace zecon::test {

inline Tensor random_image(std::size_t size, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    RandomStream rng(seed, "test/image");
    Tensor t({3, size, size});
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

/// Largest relative error between the analytic gradient of `f` at `x` and
/// central differences over `coords` randomly chosen coordinates.
struct GradCheck {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

inline GradCheck check_gradient(const std::function<ad::Var(const ad::Var&)>& f, const Tensor& x,
                                std::size_t coords, std::uint64_t seed, double h = 1e-5) {
    auto xv = ad::Var::parameter(x);
    auto loss = f(xv);
    ad::backward(loss);
    const Tensor g = xv.grad();
    double gmax = 0.0;
    for (double v : g.values()) gmax = std::max(gmax, std::abs(v));

    RandomStream rng(seed, "test/gradcheck");
    auto idx = rng.sample_without_replacement(x.size(), std::min(coords, x.size()));
    GradCheck r;
    for (auto i : idx) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        const double fp = f(ad::Var::constant(xp)).value().item();
        const double fm = f(ad::Var::constant(xm)).value().item();
        const double fd = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-3 * gmax, 1e-12});
        r.max_rel_error = std::max(r.max_rel_error, std::abs(fd - g[i]) / denom);
        ++r.checked;
    }
    return r;
}

} // namespace zecon::test
