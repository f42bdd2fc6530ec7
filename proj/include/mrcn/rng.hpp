#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "mrcn/tensor.hpp"

namespace mrcn {

// Seeded generator: MT19937-64 (std::mt19937_64) for raw 64-bit words.
// All conversions to floats, integers and permutations are done here rather
// than through <random> distributions, whose outputs are implementation
// defined, so sequences are identical across standard libraries.
//  - uniform():   top 53 bits scaled by 2^-53, in [0, 1)
//  - below(n):    Lemire multiply-shift with rejection, in [0, n)
//  - normal():    Box-Muller on two uniform() draws, one value per call
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next() { return engine_(); }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw NumericError("Rng::below: empty range");
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next()) * n;
      const auto low = static_cast<std::uint64_t>(m);
      if (low >= n || low >= (0 - n) % n) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

// Derives an independent stream seed from a base seed and a tag.
inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t tag) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Tensor of values uniform in [lo, hi).
template <typename T>
Tensor<T> rng_uniform(Rng& rng, T lo, T hi, Dims dims) {
  if (!(lo < hi)) throw NumericError("rng_uniform: requires lo < hi");
  Tensor<T> out(dims);
  const T below_hi = std::nextafter(hi, lo);
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = static_cast<T>(rng.uniform(static_cast<double>(lo), static_cast<double>(hi)));
    out[i] = v < hi ? v : below_hi;
  }
  return out;
}

}  // namespace mrcn
