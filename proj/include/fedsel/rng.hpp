#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedsel::rng {

/// SplitMix64 finalizer. Used to turn structured seeds into independent ones.
std::uint64_t splitmix64(std::uint64_t x);

/// Folds `parts` into `seed`, one splitmix64 step per part. derive(s, {a, b})
/// differs from derive(s, {b, a}).
std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> parts);

/// A seeded mt19937_64 stream with distribution transforms written out
/// explicitly, so a draw sequence is the same on every standard library.
///
///   uniform()  = (next() >> 11) * 2^-53            in [0, 1)
///   normal()   = Box-Muller cosine branch, two uniforms per call
///   gamma(a)   = Marsaglia-Tsang; shape < 1 boosted via gamma(a + 1) * U^(1/a)
///   below(n)   = rejection sampling on next() % n
class Stream {
 public:
  explicit Stream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }
  double uniform();
  double normal();
  double gamma(double shape);
  std::size_t below(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

}  // namespace fedsel::rng
