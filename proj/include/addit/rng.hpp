#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace addit {

// Counter-based noise generator "sm64bm v1": SplitMix64 finalizer keyed by
// (seed, element index), Box-Muller for normals. Stateless per element, so a
// sample is fully determined by (seed, shape) and order-independent.
namespace rng {

inline std::uint64_t splitmix64(std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

// Independent 64-bit word for counter `i` under `seed`.
inline std::uint64_t key(std::uint64_t seed, std::uint64_t i) {
    return splitmix64(seed ^ splitmix64(i));
}

// Uniform in (0, 1]; never 0 so it is safe under log().
inline double uniform01(std::uint64_t bits) {
    return (static_cast<double>(bits >> 11) + 1.0) * 0x1.0p-53;
}

// Standard normal at counter position i.
inline double normal(std::uint64_t seed, std::uint64_t i) {
    const double u1 = uniform01(key(seed, 2 * i));
    const double u2 = uniform01(key(seed, 2 * i + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

inline std::vector<double> normals(std::uint64_t seed, std::size_t n) {
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = normal(seed, i);
    return out;
}

// Uniform double in [lo, hi).
inline double uniform(std::uint64_t seed, std::uint64_t i, double lo, double hi) {
    return lo + (hi - lo) * static_cast<double>(key(seed, i) >> 11) * 0x1.0p-53;
}

// FNV-1a over a string; used to derive token ids and parameter subkeys.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace rng
}  // namespace addit
