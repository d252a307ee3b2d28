// Copyright (c) 2026 The FoRA Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace fora {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Named, independently seeded random stream. Streams derived from the same
/// master seed but different names are statistically independent; the same
/// (seed, name, draw position) always yields the same value, bit for bit.
///
/// Gaussian draws use Box-Muller on explicit 53-bit uniforms so the sequence
/// is pinned by mt19937_64 alone (no implementation-defined distributions).
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::string_view name)
      : gen_(detail::splitmix64(master_seed ^ detail::fnv1a64(name))) {}

  std::uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the spare value is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 == 0.0) u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform integer in [0, bound), bias-free by rejection.
  std::uint64_t uniform_int(std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = gen_();
    while (x >= limit) x = gen_();
    return x % bound;
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives a stream name tagged with integer coordinates, e.g. per-slot
/// adapter streams: stream_tag("adapter", 3, 1) == "adapter/3/1".
inline std::string stream_tag(std::string_view base, long a, long b = -1) {
  std::string s{base};
  s += '/';
  s += std::to_string(a);
  if (b >= 0) {
    s += '/';
    s += std::to_string(b);
  }
  return s;
}

}  // namespace fora
