#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace soh {

// Error taxonomy. Everything user-recoverable derives from Error so the CLI
// can catch one type and map it to a nonzero exit.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DomainError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct DependencyError : Error {
    using Error::Error;
};

// Seconds in the nominal 400-day life used as the time normalisation scale.
inline constexpr double kTimeScaleSeconds = 34'560'000.0;

// Faraday constant, C/mol.
inline constexpr double kFaraday = 96485.0;

// splitmix64; used to derive independent per-task RNG streams from one seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace soh
