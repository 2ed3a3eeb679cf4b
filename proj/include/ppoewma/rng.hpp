#pragma once

#include <cstdint>
#include <random>

namespace ppoewma {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream). Each run derives its
/// initialization, environment, sampling and shuffle streams from this so
/// that no two consumers share a sequence.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                      0x5eedu};
    return Rng(seq);
}

/// Uniform double in [0, 1) built from the top 53 bits.
inline double uniform01(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace ppoewma
