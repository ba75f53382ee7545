// SPDX-License-Identifier: Apache-2.0
//
// Counter-based seed derivation and the handful of samplers the simulator
// needs. Every stochastic stage draws from a stream derived from
// (master seed, label, index), so adding work to one stage never perturbs
// another.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string_view>

namespace sacc {

using Engine = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t label_hash(std::string_view label) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                    std::uint64_t index = 0) noexcept {
  return splitmix64(splitmix64(master ^ label_hash(label)) + splitmix64(index + 0x632be59bd9b4e019ULL));
}

inline Engine make_engine(std::uint64_t master, std::string_view label, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(derive_seed(master, label, index)),
                    static_cast<std::uint32_t>(derive_seed(master, label, index) >> 32)};
  return Engine(seq);
}

/// Uniform in [0, 1) from the top 53 bits; avoids implementation-defined
/// behaviour of std::uniform_real_distribution across standard libraries.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Inverse-CDF draw from a probability vector. Falls back to the last index
/// with positive mass when accumulated rounding leaves u above the total.
inline std::size_t sample_discrete(std::span<const double> pmf, Engine& rng) {
  const double u = uniform01(rng);
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < pmf.size(); ++i) {
    if (pmf[i] > 0.0) last_positive = i;
    acc += pmf[i];
    if (u < acc) return i;
  }
  return last_positive;
}

/// Exact Poisson draw by sequential inversion. No cap on the result.
inline int sample_poisson(double mean, Engine& rng) {
  if (mean < 0.0 || !std::isfinite(mean)) throw std::domain_error("sample_poisson: mean must be finite and >= 0");
  if (mean == 0.0) return 0;
  const double u = uniform01(rng);
  double p = std::exp(-mean);
  double cdf = p;
  int n = 0;
  // Large means lose the head to underflow; none of the configured rates come close.
  while (u >= cdf) {
    ++n;
    p *= mean / n;
    cdf += p;
    if (p == 0.0 && cdf <= u) break;
  }
  return n;
}

/// Standard circularly-symmetric complex Gaussian component pair, CN(0, 1).
struct ComplexNormal {
  std::normal_distribution<double> normal{0.0, std::sqrt(0.5)};
  template <class Cx>
  Cx operator()(Engine& rng) {
    const double re = normal(rng);
    const double im = normal(rng);
    return Cx(re, im);
  }
};

}  // namespace sacc
