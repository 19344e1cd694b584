#pragma once

#include "zecon/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace zecon {

/// Seed-addressable random stream. Streams derived from the same seed with
/// different names are independent, so adding draws to one part of a run
/// never shifts the numbers another part sees.
class RandomStream {
public:
    explicit RandomStream(std::uint64_t seed, std::string_view name = {});

    RandomStream derive(std::string_view name) const { return RandomStream(seed_, name_ + "/" + std::string(name)); }
    std::uint64_t seed() const { return seed_; }

    double uniform(double lo, double hi);
    std::size_t uniform_index(std::size_t n);
    double normal();
    Tensor normal(std::vector<std::size_t> shape);
    /// First `count` entries of a uniform random permutation of [0, n).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

    std::mt19937_64& engine() { return engine_; }

private:
    std::uint64_t seed_;
    std::string name_;
    std::mt19937_64 engine_;
};

} // namespace zecon
