#pragma once

#include <cstdint>
#include <random>

#include "moediff/matrix.hpp"

namespace moediff {

/// Seeded, platform-stable random source. mt19937_64 drives all draws; the
/// uniform/normal mappings are implemented here rather than with the standard
/// distributions, which are not specified bit-exactly across library vendors.
///
/// Instances are single-owner: never share one across concurrent callers.
class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) : seed_(seed), gen_(seed) {}

    std::uint64_t seed() const noexcept { return seed_; }

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform01();

    /// Standard normal via Box-Muller (spare value cached).
    double normal();

    /// Uniform integer in [lo, hi] inclusive, rejection-sampled (no modulo bias).
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);

    bool bernoulli(double p) { return uniform01() < p; }

    Matrix2D normal_matrix(int rows, int cols, double stddev = 1.0);

    /// Derive an independent child seed for stream `id` (splitmix64 of
    /// seed ^ golden-ratio-scrambled id). Gives candidates/trajectories
    /// their own reproducible RNGs.
    std::uint64_t derive_seed(std::uint64_t id) const;

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace moediff
