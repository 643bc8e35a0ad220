// hpm/rng.hpp
//
// Counter-based random numbers. Every draw is a pure function of
// (seed, stream, counter) so results never depend on call order across
// threads.

#pragma once

#include <complex>
#include <cstdint>
#include <cmath>
#include <numbers>
#include <string_view>

namespace hpm {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a, used to turn stream names into stream ids.
constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

class CounterRng {
 public:
  constexpr CounterRng(std::uint64_t seed, std::string_view stream) noexcept
      : key_(detail::splitmix64(seed ^ detail::splitmix64(detail::fnv1a(stream)))) {}

  constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
    return detail::splitmix64(key_ ^ detail::splitmix64(counter + 0x632be59bd9b4e019ULL));
  }

  /// Uniform on [0, 1).
  constexpr double uniform(std::uint64_t counter) const noexcept {
    return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on two consecutive counters.
  double normal(std::uint64_t counter) const noexcept {
    const double u1 = 1.0 - uniform(2 * counter);
    const double u2 = uniform(2 * counter + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::complex<double> complex_normal(std::uint64_t counter) const noexcept {
    return {normal(2 * counter), normal(2 * counter + 1)};
  }

 private:
  std::uint64_t key_;
};

}  // namespace hpm
