#pragma once

// Counter-based random numbers: every draw is a pure function of
// (seed, stream, index), so parallel and serial generation agree.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace aode::rng {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
}

// Uniform on (0, 1); never returns 0 so it is safe inside log().
inline double uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  return (static_cast<double>(hash(seed, stream, index) >> 11) + 0.5) * 0x1.0p-53;
}

// Standard normal via Box-Muller on two independent counters.
inline double normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) noexcept {
  const double u1 = uniform(seed, stream, 2 * index);
  const double u2 = uniform(seed, stream, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace aode::rng
