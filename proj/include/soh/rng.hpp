#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace soh::rng {

// Explicit transforms over mt19937_64 so streams are bit-stable across
// standard libraries (std distributions are implementation-defined).

inline double u01(std::mt19937_64& g) { return double(g() >> 11) * 0x1.0p-53; }

inline double uniform(std::mt19937_64& g, double a, double b) { return a + (b - a) * u01(g); }

inline std::uint64_t index(std::mt19937_64& g, std::uint64_t n) { return g() % n; }

inline double normal(std::mt19937_64& g) {
    const double u1 = 1.0 - u01(g);  // (0, 1]
    const double u2 = u01(g);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
}

inline double lognormal(std::mt19937_64& g, double mu, double sigma) {
    return std::exp(mu + sigma * normal(g));
}

}  // namespace soh::rng
