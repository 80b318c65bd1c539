#pragma once

#include <cstddef>
#include <cstdint>

namespace casceq {

/// SplitMix64 generator with keyed sub-streams.
///
/// `Rng::keyed(seed, stream, sub)` yields a generator whose output depends
/// only on its three keys, so resample `r` draws the same indices no matter
/// which thread runs it or in which order. All derived draws (indices,
/// uniforms, normals) are defined here rather than through <random>
/// distributions, whose algorithms differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept : state_(mix(seed)) {}

  static Rng keyed(std::uint64_t seed, std::uint64_t stream,
                   std::uint64_t sub = 0) noexcept;

  static std::uint64_t mix(std::uint64_t z) noexcept;

  std::uint64_t next() noexcept;

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() noexcept;

  /// Unbiased integer in [0, n); n must be positive.
  std::size_t index(std::size_t n) noexcept;

  /// Standard normal via Box-Muller (one output per two uniforms).
  double normal() noexcept;

 private:
  struct RawState {};
  Rng(RawState, std::uint64_t state) noexcept : state_(state) {}

  std::uint64_t state_;
};

}  // namespace casceq
