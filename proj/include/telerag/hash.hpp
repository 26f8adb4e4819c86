#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace telerag {

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// First 8 bytes of SHA-256(data), big-endian. Used to derive RNG streams
/// that do not depend on evaluation order.
std::uint64_t sha256_u64(std::string_view data);

/// 64-bit FNV-1a. Cheap, stable across platforms; used for feature hashing.
constexpr std::uint64_t fnv1a64(std::string_view data) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace telerag
