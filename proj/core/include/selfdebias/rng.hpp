#pragma once
// Seeded random streams with platform-stable output.
//
// Every stochastic component in the harness (subset sampling, the
// simulator, bootstrap resampling) draws through these helpers so that a
// run is reproducible bit-for-bit from its seed, independent of the
// standard library's distribution implementations and of scheduling.

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>

namespace selfdebias {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; decorrelates nearby seed inputs.
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives a child seed from a base seed and a list of stream labels
// (e.g. {example_id, strategy, turn}).
constexpr std::uint64_t derive_seed(std::uint64_t base,
                                    std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = mix64(base);
    for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
    return h;
}

inline Rng derive_stream(std::uint64_t base,
                         std::initializer_list<std::uint64_t> parts) {
    return Rng(derive_seed(base, parts));
}

// Unbiased draw in [0, n) via rejection; stable across platforms.
inline std::uint64_t bounded(Rng& rng, std::uint64_t n) {
    const std::uint64_t limit =
        std::numeric_limits<std::uint64_t>::max() -
        std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t v;
    do {
        v = rng();
    } while (v >= limit);
    return v % n;
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace selfdebias
