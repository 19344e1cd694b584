#include "zecon/random.hpp"

#include <numeric>

namespace zecon {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::mt19937_64 seeded(std::uint64_t seed, std::string_view name) {
    const std::uint64_t h = fnv1a(name);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    return std::mt19937_64(seq);
}

} // namespace

RandomStream::RandomStream(std::uint64_t seed, std::string_view name)
    : seed_(seed), name_(name), engine_(seeded(seed, name)) {}

double RandomStream::uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
}

std::size_t RandomStream::uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

double RandomStream::normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

Tensor RandomStream::normal(std::vector<std::size_t> shape) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> dist(0.0, 1.0);
    for (double& v : t.values()) v = dist(engine_);
    return t;
}

std::vector<std::size_t> RandomStream::sample_without_replacement(std::size_t n, std::size_t count) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    count = std::min(count, n);
    // partial Fisher-Yates
    for (std::size_t i = 0; i < count; ++i) {
        const std::size_t j = i + uniform_index(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(count);
    return idx;
}

} // namespace zecon
