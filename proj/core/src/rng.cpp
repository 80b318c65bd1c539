#include "casceq/rng.hpp"

#include <cmath>
#include <numbers>

namespace casceq {

std::uint64_t Rng::mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng Rng::keyed(std::uint64_t seed, std::uint64_t stream,
               std::uint64_t sub) noexcept {
  return Rng(RawState{}, mix(mix(mix(seed) + stream) + sub));
}

std::uint64_t Rng::next() noexcept {
  state_ += 0x9e3779b97f4a7c15ULL;
  return mix(state_);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) noexcept {
  const std::uint64_t bound = n;
  // 2^64 mod n; draws below it would bias the low residues.
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t x = next();
    if (x >= threshold) return static_cast<std::size_t>(x % bound);
  }
}

double Rng::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace casceq
