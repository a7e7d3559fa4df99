#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace varcaps {

/// Seeded generator with hand-rolled distributions, so that a given seed
/// produces the same stream on every standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1) with 53 random bits.
  double u01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * u01(); }

  /// Standard normal via Box-Muller.
  double normal() {
    const double u1 = u01();
    const double u2 = u01();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) *
           std::cos(2.0 * 3.141592653589793238462643 * u2);
  }

  bool bernoulli(double p) { return u01() < p; }

  /// Uniform integer in [lo, hi], inclusive.
  int uniform_int(int lo, int hi) {
    return lo + static_cast<int>(u01() * static_cast<double>(hi - lo + 1));
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
      std::swap(v[static_cast<std::size_t>(i)],
                v[static_cast<std::size_t>(uniform_int(0, i))]);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace varcaps
