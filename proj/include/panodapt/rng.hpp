#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace panodapt {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Small deterministic generator. Implemented by hand (not <random>) so that
// streams are bit-stable across standard libraries, which the determinism and
// resume guarantees rely on.
struct Rng {
  std::uint64_t s = 0x853c49e6748fea9bULL;

  explicit Rng(std::uint64_t seed = 1) : s(seed ^ 0x9e3779b97f4a7c15ULL) {
    // warm up so nearby seeds decorrelate
    splitmix64(s);
    splitmix64(s);
  }

  std::uint64_t next() { return splitmix64(s); }

  // uniform in [0, 1)
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // uniform integer in [0, n)
  int below(int n) { return n > 0 ? int(next() % std::uint64_t(n)) : 0; }

  bool coin(double p = 0.5) { return uniform() < p; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    // Box-Muller, fresh pair each call for stream simplicity
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.28318530717958647692 * u2);
  }
};

// Derived stream: one stream per (seed, iteration, purpose) so that resumed
// runs replay the exact random choices of an uninterrupted run.
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> salts) {
  std::uint64_t s = seed;
  splitmix64(s);
  for (std::uint64_t salt : salts) {
    s ^= salt + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    splitmix64(s);
  }
  return Rng(s);
}

}  // namespace panodapt
