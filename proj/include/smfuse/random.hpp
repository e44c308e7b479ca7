#ifndef SMFUSE_RANDOM_HPP
#define SMFUSE_RANDOM_HPP

#include <cstdint>
#include <random>

namespace smfuse {

// Streams are reproducible for a given standard library; every random
// component derives its own engine from a seed, never from shared state.
using Rng = std::mt19937_64;

inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
    return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng);
}

inline double standard_normal(Rng& rng) {
    return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline double gamma_variate(Rng& rng, double shape, double scale) {
    return std::gamma_distribution<double>(shape, scale)(rng);
}

} // namespace smfuse

#endif
