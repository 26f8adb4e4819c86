#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace telerag {

/// Deterministic random stream. Bounded draws are done here rather than via
/// std::uniform_int_distribution so outputs do not vary between standard
/// library implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Seed derived from a global seed plus an ordered list of labels
    /// (question id, epoch, ...). Independent of call order.
    static Rng derive(std::uint64_t seed, std::initializer_list<std::string_view> labels);

    std::uint64_t next() { return engine_(); }

    /// Uniform integer in [0, bound). `bound` must be positive.
    std::uint64_t below(std::uint64_t bound);

    /// Uniform double in [0, 1) with 53 bits of precision.
    double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

private:
    std::mt19937_64 engine_;
};

}  // namespace telerag
