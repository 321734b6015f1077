#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace voxcal::rng {

// All randomness flows through mt19937_64 plus the explicit transforms
// below. std::*_distribution is avoided on purpose: its output differs
// between standard library implementations, while the engine itself and
// these transforms are specified bit-exactly.
inline constexpr const char* kAlgorithmId = "mt19937_64/u53-boxmuller-lemire-v1";

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Engine& eng) {
    return static_cast<double>(eng() >> 11) * 0x1.0p-53;
}

// Uniform double in [lo, hi).
inline double uniform(Engine& eng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(eng);
}

// Standard normal via Box-Muller; one deviate per call, partner discarded
// to keep the draw sequence independent of call grouping.
inline double normal01(Engine& eng) {
    double u1 = 1.0 - uniform01(eng); // (0, 1], keeps the log finite
    double u2 = uniform01(eng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
}

// Unbiased-enough bounded integer in [0, n) via 128-bit multiply-shift.
inline std::uint64_t bounded(Engine& eng, std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(eng()) * static_cast<unsigned __int128>(n)) >> 64);
}

} // namespace voxcal::rng
