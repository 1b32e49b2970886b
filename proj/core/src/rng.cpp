#include "moediff/rng.hpp"

#include <cmath>
#include <numbers>

#include "moediff/error.hpp"

namespace moediff {

double SeededRng::uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double SeededRng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller on (0,1] x [0,1): u1 must stay away from 0 for the log.
    const double u1 = 1.0 - uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

std::int64_t SeededRng::uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi) throw ConfigError("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) {  // full 64-bit range
        return static_cast<std::int64_t>(gen_());
    }
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
        x = gen_();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
}

Matrix2D SeededRng::normal_matrix(int rows, int cols, double stddev) {
    Matrix2D m(rows, cols);
    for (auto& x : m.data()) x = normal() * stddev;
    return m;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

}  // namespace

std::uint64_t SeededRng::derive_seed(std::uint64_t id) const {
    return splitmix64(seed_ ^ splitmix64(id));
}

}  // namespace moediff
