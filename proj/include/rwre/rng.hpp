#pragma once

// Counter-based random streams. Every Monte Carlo sample and every lattice
// site gets its own stream derived by hashing (master seed, label, index),
// so results never depend on worker scheduling.

#include <cstdint>
#include <limits>
#include <string_view>

#include "rwre/lattice.hpp"

namespace rwre {

inline uint64_t splitmix64(uint64_t& state) {
  uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// stateless avalanche of a single word
inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
  return mix64(a + 0x9e3779b97f4a7c15ULL + (b ^ (b << 1)));
}

inline uint64_t hash_label(std::string_view label) {
  // FNV-1a
  uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : label) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t hash_site(const Site& s) {
  uint64_t h = 0x2545f4914f6cdd1dULL;
  for (int i = 0; i < kMaxDim; ++i)
    h = hash_combine(h, static_cast<uint64_t>(static_cast<uint32_t>(s.c[i])));
  return h;
}

// SplitMix64 sequence; satisfies UniformRandomBitGenerator so the <random>
// distributions can run on it.
class RngStream {
 public:
  using result_type = uint64_t;

  RngStream() : state_(0) {}
  explicit RngStream(uint64_t seed) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<uint64_t>::max(); }

  result_type operator()() { return splitmix64(state_); }

  // [0,1), 53-bit resolution
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  // (0,1); safe for logs and inverse-cdf transforms
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  // uniform integer in [0, n)
  uint64_t below(uint64_t n) { return (*this)() % n; }

 private:
  uint64_t state_;
};

inline RngStream derive_stream(uint64_t master, std::string_view label, uint64_t index) {
  return RngStream(hash_combine(hash_combine(master, hash_label(label)), index));
}

inline RngStream derive_site_stream(uint64_t master, std::string_view label, const Site& x) {
  return RngStream(hash_combine(hash_combine(master, hash_label(label)), hash_site(x)));
}

}  // namespace rwre
