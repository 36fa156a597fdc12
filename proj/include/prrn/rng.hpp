#pragma once

// Deterministic random sampling. std::mt19937_64 itself is fully specified,
// but the standard distributions and std::shuffle are not, so everything
// downstream of the engine is implemented here to keep seeded runs
// reproducible across standard libraries.

#include <cstdint>
#include <random>
#include <vector>

#include "prrn/mat.hpp"

namespace prrn {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return (double)(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard gaussian via Box-Muller (one value per call; the pair's second
  /// value is discarded for a fixed, stateless draw pattern).
  double gaussian() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(6.283185307179586 * u2);
  }

  /// Uniform integer in [0, n) by rejection.
  std::uint64_t bounded(std::uint64_t n) {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  /// Fisher-Yates shuffle.
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = (std::size_t)bounded(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  Mat gaussian_mat(std::size_t r, std::size_t c) {
    Mat m(r, c);
    for (double& v : m.data) v = gaussian();
    return m;
  }

  Mat uniform_mat(std::size_t r, std::size_t c, double lo, double hi) {
    Mat m(r, c);
    for (double& v : m.data) v = uniform(lo, hi);
    return m;
  }

  /// Uniform (Haar) random rotation: QR of a gaussian 3x3 via modified
  /// Gram-Schmidt (positive diagonal of R), with a column flip when the
  /// result lands in the reflection component.
  Mat random_rotation3() {
    Mat g = gaussian_mat(3, 3);
    Mat q(3, 3);
    for (std::size_t col = 0; col < 3; ++col) {
      double v[3] = {g(0, col), g(1, col), g(2, col)};
      for (int pass = 0; pass < 2; ++pass) {  // twice-is-enough re-orthogonalization
        for (std::size_t prev = 0; prev < col; ++prev) {
          const double d = v[0] * q(0, prev) + v[1] * q(1, prev) + v[2] * q(2, prev);
          for (std::size_t k = 0; k < 3; ++k) v[k] -= d * q(k, prev);
        }
      }
      const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
      if (n < 1e-12) return random_rotation3();  // essentially never
      for (std::size_t k = 0; k < 3; ++k) q(k, col) = v[k] / n;
    }
    if (det3(q) < 0.0)
      for (std::size_t k = 0; k < 3; ++k) q(k, 2) = -q(k, 2);
    return q;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace prrn
