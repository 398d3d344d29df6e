#pragma once

// Counter-based random numbers. Every deviate is a pure function of
// (key, counter), so chains can be stepped in any order or on any thread
// and still consume exactly the same values.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace klpost {

/// Philox4x32-10 (Salmon et al., SC'11).
inline std::array<std::uint32_t, 4> philox4x32(std::array<std::uint32_t, 4> ctr,
                                               std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = std::uint64_t{kMul0} * ctr[0];
    const std::uint64_t p1 = std::uint64_t{kMul1} * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text,
                             std::uint64_t hash = 0xCBF29CE484222325ull) {
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001B3ull;
  }
  return hash;
}

/// Sub-seed for a named purpose ("datagen.targets", ...).
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view label) {
  return splitmix64(fnv1a64(label) ^ splitmix64(seed));
}

/// Stateless stream of uniforms and normals indexed by three counters.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed)
      : key_{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)} {}

  /// Uniform on the open interval (0, 1).
  double uniform(std::uint32_t stream, std::uint32_t i, std::uint32_t j,
                 std::uint32_t k = 0) const {
    const auto r = philox4x32({k, j, i, stream}, key_);
    return to_open_unit(r[0], r[1]);
  }

  /// Standard normal via Box-Muller on one Philox block.
  double normal(std::uint32_t stream, std::uint32_t i, std::uint32_t j,
                std::uint32_t k = 0) const {
    const auto r = philox4x32({k, j, i, stream}, key_);
    const double u1 = to_open_unit(r[0], r[1]);
    const double u2 = to_open_unit(r[2], r[3]);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  static double to_open_unit(std::uint32_t a, std::uint32_t b) {
    const std::uint64_t bits = ((std::uint64_t{a} << 32) | b) >> 11;
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  std::array<std::uint32_t, 2> key_;
};

/// Noise for the dissipative Hamiltonian sampler: Wiener increments keyed on
/// (chain, step, component) and the initial momenta on a reserved stream.
/// Values do not depend on the Lagrange multiplier, which gives common random
/// numbers across Newton iterations.
class NoiseBank {
 public:
  NoiseBank(std::uint64_t seed, double delta_t)
      : rng_(derive_seed(seed, "sampler.noise")), sqrt_dt_(std::sqrt(delta_t)) {}

  /// Increment of the Wiener process over [t_m, t_{m+1}]; variance delta_t.
  double wiener_increment(std::size_t chain, std::size_t step, std::size_t component) const {
    return sqrt_dt_ * rng_.normal(kWienerStream, static_cast<std::uint32_t>(chain),
                                  static_cast<std::uint32_t>(step),
                                  static_cast<std::uint32_t>(component));
  }

  /// Standard normal initial momentum, fixed for the whole run.
  double initial_momentum(std::size_t chain, std::size_t component) const {
    return rng_.normal(kMomentumStream, static_cast<std::uint32_t>(chain), 0,
                       static_cast<std::uint32_t>(component));
  }

 private:
  static constexpr std::uint32_t kWienerStream = 0;
  static constexpr std::uint32_t kMomentumStream = 1;

  CounterRng rng_;
  double sqrt_dt_;
};

}  // namespace klpost
