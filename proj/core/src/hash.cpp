#include "moediff/hash.hpp"

#include <cstdio>
#include <fstream>
#include <vector>

#include "moediff/error.hpp"

namespace moediff {

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h_));
    return buf;
}

std::uint64_t hash_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open file for hashing: " + path);
    Fnv1a h;
    char buf[4096];
    while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
        h.update(buf, static_cast<std::size_t>(in.gcount()));
    }
    return h.digest();
}

}  // namespace moediff
