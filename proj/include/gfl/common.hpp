#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace gfl {

// Invalid inputs to a numerical routine (non-finite logits, labels out of range).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Inconsistent configuration: bad shapes, infeasible scene specs, unknown keys.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

inline void require_finite(double v, const char* what)
{
    if (!std::isfinite(v)) {
        throw DomainError(std::string(what) + ": non-finite input");
    }
}

// ---------------------------------------------------------------------------
// Stable scalar primitives
// ---------------------------------------------------------------------------

inline double sigmoid(double x)
{
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x)
{
    if (x > 0.0) {
        return x + std::log1p(std::exp(-x));
    }
    return std::log1p(std::exp(x));
}

// log(sigmoid(x)) = -softplus(-x)
inline double log_sigmoid(double x)
{
    return -softplus(-x);
}

inline double logit(double p)
{
    return std::log(p) - std::log1p(-p);
}

// ---------------------------------------------------------------------------
// Seed streams
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t hash_name(std::string_view name)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : name) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Named child seed of a root seed: child_seed(root, "dataset"), child_seed(root, "init"), ...
inline std::uint64_t child_seed(std::uint64_t root, std::string_view name)
{
    return splitmix64(splitmix64(root) ^ hash_name(name));
}

inline std::uint64_t child_seed(std::uint64_t root, std::uint64_t index)
{
    return splitmix64(splitmix64(root) + 0x632be59bd9b4e019ULL * (index + 1));
}

using Rng = std::mt19937_64;

}   // namespace gfl
