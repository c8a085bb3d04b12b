#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>

namespace duet {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t hash_tag(std::string_view tag) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Deterministic RNG stream. Distributions are hand-rolled so draws do not
// depend on the standard library's implementation-defined algorithms.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : eng_(splitmix64(seed)), seed_(seed) {}

  uint64_t seed() const { return seed_; }

  // Derived, statistically independent substream.
  RngStream substream(uint64_t tag) const { return RngStream(splitmix64(seed_ ^ splitmix64(tag))); }
  RngStream substream(std::string_view tag) const { return substream(hash_tag(tag)); }

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (one cached value).
  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  // Standard Gumbel(0, 1).
  double gumbel() {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    return -std::log(-std::log(u));
  }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }

 private:
  std::mt19937_64 eng_;
  uint64_t seed_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace duet
