#pragma once

#include <cstdint>
#include <cmath>

namespace twintune {

// splitmix64 step: the standard finalizer-style mixer. Used both as the
// stream generator and as the job-seed hash so that every (campaign, k, j,
// kind) tuple maps to an independent, platform-stable stream.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Order-sensitive mix of a seed tuple (splitmix-style): feeding each word
// through the mixer chains the state, so permuted tuples give unrelated seeds.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b,
                              std::uint64_t c = 0, std::uint64_t d = 0) {
  std::uint64_t s = a;
  (void)splitmix64(s);
  s ^= b;
  (void)splitmix64(s);
  s ^= c;
  (void)splitmix64(s);
  s ^= d;
  return splitmix64(s);
}

// Deterministic draw stream. Hand-rolled (splitmix64 + explicit conversions)
// instead of <random> distributions: the std:: distribution algorithms are
// implementation-defined, and recorded campaign outputs must not depend on
// the standard library version.
class NoiseStream {
 public:
  explicit NoiseStream(std::uint64_t seed) : state_(seed) {}

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(splitmix64(state_) >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (no caching: one draw consumes two
  // uniforms, keeping the stream position independent of call history).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;  // guard log(0)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Rademacher draw: +1 or -1 with equal probability.
  double bernoulli_sign() { return (splitmix64(state_) & 1ULL) ? 1.0 : -1.0; }

  // Uniform integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) { return n ? splitmix64(state_) % n : 0; }

 private:
  std::uint64_t state_;
};

}  // namespace twintune
