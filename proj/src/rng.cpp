#include "telerag/rng.hpp"

#include <string>

#include "telerag/hash.hpp"

namespace telerag {

Rng Rng::derive(std::uint64_t seed, std::initializer_list<std::string_view> labels) {
    std::string key = std::to_string(seed);
    for (auto label : labels) {
        key.push_back('\x1f');
        key.append(label);
    }
    return Rng(sha256_u64(key));
}

std::uint64_t Rng::below(std::uint64_t bound) {
    // Rejection sampling over the largest multiple of `bound`.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
    std::uint64_t x = engine_();
    while (x > limit) x = engine_();
    return x % bound;
}

}  // namespace telerag
