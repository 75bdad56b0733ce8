#pragma once

#include "diffma/common.hpp"

#include <cmath>
#include <cstdint>
#include <random>

namespace diffma {

/// Deterministic random stream. Normal draws use an explicit Box-Muller
/// transform over the raw 64-bit generator so sequences do not depend on the
/// standard library's distribution internals.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(gen_() % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename Scalar>
  Mat<Scalar> normal_mat(Index rows, Index cols, double stddev = 1.0) {
    Mat<Scalar> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        m(i, j) = static_cast<Scalar>(stddev * normal());
    return m;
  }

  template <typename Scalar>
  Mat<Scalar> uniform_mat(Index rows, Index cols, double lo, double hi) {
    Mat<Scalar> m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        m(i, j) = static_cast<Scalar>(uniform(lo, hi));
    return m;
  }

  /// Derive an independent stream for item `index` (used for per-item
  /// parallel generation with reproducible results).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t index) {
    // splitmix64 over seed ^ golden-ratio-scrambled index
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace diffma
