#pragma once

#include "adaf/types.hpp"

#include <cmath>
#include <random>

namespace adaf {

// Seeded generator with explicit, implementation-independent distributions.
// std::uniform_real_distribution and friends are not pinned by the standard,
// so we draw raw bits and transform them ourselves; frozen test values and
// bit-identical reruns depend on it.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; two uniform draws per call.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
    return static_cast<int>(uniform() * n);
  }

  // Independent child stream; does not consume this stream's state.
  Rng derive(std::string_view tag) const { return Rng(mix_seed(seed_, fnv1a(tag))); }

  Rng derive(std::string_view tag, std::uint64_t index) const {
    return Rng(mix_seed(mix_seed(seed_, fnv1a(tag)), index));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
  std::mt19937_64 eng_;
};

template <class S>
Matrix<S> random_uniform(Rng& rng, Eigen::Index rows, Eigen::Index cols, S lo, S hi) {
  Matrix<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<S>(rng.uniform(lo, hi));
  return m;
}

template <class S>
Matrix<S> random_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols, S stddev = S(1)) {
  Matrix<S> m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = stddev * static_cast<S>(rng.normal());
  return m;
}

}  // namespace adaf
