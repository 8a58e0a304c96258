#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

#include "redgame/errors.hpp"

namespace redgame {

// splitmix64 finalizer; used to mix seeds and tags into engine states.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

// Deterministic RNG stream. mt19937_64 output is fully specified by the
// standard; distribution helpers are hand-rolled because std:: distributions
// are not bit-portable across library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(mix64(seed)) {}

  // Derives an independent stream from a root seed and a tag path,
  // e.g. Rng::stream(seed, {kStep, step, kEpisode, i}).
  static Rng stream(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t h = mix64(seed);
    for (std::uint64_t t : tags) h = mix64(h ^ t);
    Rng r(0);
    r.eng_.seed(h);
    return r;
  }

  std::uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n).
  std::size_t below(std::size_t n) {
    if (n == 0) raise(Errc::empty_input, "Rng::below requires n > 0");
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  bool bernoulli(double p) { return uniform01() < p; }

  // Index draw from a probability vector (assumed non-negative, summing to ~1).
  std::size_t categorical(const std::vector<double>& probs) {
    if (probs.empty()) raise(Errc::empty_input, "Rng::categorical on empty vector");
    double u = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (u < acc) return i;
    }
    return probs.size() - 1;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 eng_;
};

// Tags for deriving named substreams; values are arbitrary but fixed.
namespace rng_tag {
inline constexpr std::uint64_t kBatch = 0xB1;
inline constexpr std::uint64_t kEpisode = 0xE7;
inline constexpr std::uint64_t kMinibatch = 0x3B;
inline constexpr std::uint64_t kEval = 0xEA;
inline constexpr std::uint64_t kArena = 0xA5;
inline constexpr std::uint64_t kSft = 0x5F;
inline constexpr std::uint64_t kGame = 0x9A;
}  // namespace rng_tag

}  // namespace redgame
