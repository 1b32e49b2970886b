#pragma once

#include <cstdint>
#include <cstring>
#include <string>

#include "moediff/matrix.hpp"

namespace moediff {

/// FNV-1a accumulator used to fingerprint parameter sets and output files.
class Fnv1a {
public:
    void update(const void* bytes, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(bytes);
        for (std::size_t i = 0; i < n; ++i) {
            h_ ^= p[i];
            h_ *= 0x100000001b3ULL;
        }
    }
    void update(std::uint64_t v) { update(&v, sizeof(v)); }
    void update(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof(bits));
        update(bits);
    }
    void update(const Matrix2D& m) {
        update(static_cast<std::uint64_t>(m.rows()));
        update(static_cast<std::uint64_t>(m.cols()));
        for (double x : m.data()) update(x);
    }
    void update(const std::string& s) { update(s.data(), s.size()); }

    std::uint64_t digest() const noexcept { return h_; }
    std::string hex() const;

private:
    std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::uint64_t hash_file_bytes(const std::string& path);

}  // namespace moediff
