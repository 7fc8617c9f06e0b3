#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sparselvm {

using Rng = std::mt19937_64;

/// Mixes a base seed with stream identifiers (splitmix64 finaliser), so that
/// replicates, rows and sweeps each get an independent generator.
inline std::uint64_t derive_seed(std::uint64_t seed,
                                 std::initializer_list<std::uint64_t> stream) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  std::uint64_t h = mix(seed);
  for (auto s : stream) h = mix(h ^ mix(s));
  return h;
}

inline double draw_uniform(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double draw_normal(Rng& rng, double mean = 0.0, double sd = 1.0) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

inline double draw_exponential(Rng& rng) {
  return std::exponential_distribution<double>(1.0)(rng);
}

/// Gamma with the given shape and rate (inverse scale).
inline double draw_gamma(Rng& rng, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

inline double draw_beta(Rng& rng, double a, double b) {
  const double x = draw_gamma(rng, a, 1.0);
  const double y = draw_gamma(rng, b, 1.0);
  return x / (x + y);
}

inline bool draw_bernoulli(Rng& rng, double p) { return draw_uniform(rng) < p; }

}  // namespace sparselvm
