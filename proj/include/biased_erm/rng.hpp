#pragma once

#include <cstdint>

namespace biased_erm::rng {

// Counter-based draws: every random decision is a pure function of
// (seed, stream, index), so dropping or reordering one example never shifts
// the coins seen by any other.

inline constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash(std::uint64_t seed, std::uint64_t stream,
                                    std::uint64_t index) noexcept {
    return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

/// Uniform double in [0, 1) with 53 random bits.
inline constexpr double to_unit(std::uint64_t bits) noexcept {
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

inline constexpr double uniform(std::uint64_t seed, std::uint64_t stream,
                                std::uint64_t index) noexcept {
    return to_unit(hash(seed, stream, index));
}

/// Derives an independent child seed, e.g. one per Monte Carlo repetition.
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag,
                                           std::uint64_t counter) noexcept {
    return hash(seed ^ 0x5851f42d4c957f2dULL, tag, counter);
}

/// Named streams so independent decisions never share coins.
enum Stream : std::uint64_t {
    kGroup = 1,
    kFeature = 2,
    kLabelNoise = 3,
    kRetention = 4,
    kLabelFlip = 5,
    kHoldout = 6,
};

}  // namespace biased_erm::rng
