#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace varlab {

using Rng = std::mt19937_64;

// SplitMix64 finalizer; used to derive independent stream seeds from a key.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t key, std::uint64_t tag) {
  return mix_seed(mix_seed(key) ^ mix_seed(tag * 0x632be59bd9b4e019ULL + 1));
}

inline Rng make_rng(std::uint64_t key, std::uint64_t tag) {
  return Rng(derive_seed(key, tag));
}

// Uniform real in [lo, hi) built from raw engine bits, so results do not
// depend on the standard library's distribution implementation.
inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

// Box-Muller; one normal per call (the sibling is discarded to keep the
// stream position independent of call history).
inline double standard_normal(Rng& rng) {
  const double u1 = 1.0 - uniform(rng);
  const double u2 = uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace varlab
