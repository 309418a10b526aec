#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace xcnn {

using Rng = std::mt19937_64;

/// Independent stream for a (seed, tag...) tuple, e.g. (seed, epoch, batch).
inline Rng derive_rng(std::initializer_list<std::uint64_t> parts) {
  std::seed_seq seq(parts.begin(), parts.end());
  return Rng(seq);
}

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace xcnn
