#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace adaf {

// Dense types. Row-major storage throughout: images and token matrices are
// (rows = pixels or tokens) x (cols = channels or features), so flat indexing
// matches the on-disk and im2col layouts.
template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using IndexVector = Eigen::Matrix<std::int32_t, Eigen::Dynamic, 1>;

// Default scalar for the toolkit. Gradient checks against central finite
// differences need the headroom of doubles.
using Real = double;

// A 2-D pixel grid with channels, stored as an (h*w) x c matrix.
// Pixel (y, x) lives in row y*w + x.
struct GridShape {
  int h = 0;
  int w = 0;
  int c = 0;

  int rows() const { return h * w; }
  long size() const { return static_cast<long>(h) * w * c; }
  bool operator==(const GridShape&) const = default;
};

inline std::string to_string(const GridShape& s) {
  return std::to_string(s.h) + "x" + std::to_string(s.w) + "x" + std::to_string(s.c);
}

// 64-bit FNV-1a. Used for seed derivation and config hashing; must stay
// stable across runs and platforms.
inline std::uint64_t fnv1a(std::string_view text, std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over the xor; decorrelates derived streams.
  std::uint64_t z = (a ^ (b + 0x9e3779b97f4a7c15ull)) + 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <class S>
S mean_square_diff(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("mean_square_diff: shape mismatch");
  return (a - b).squaredNorm() / static_cast<S>(a.size());
}

template <class S>
S mean_abs_diff(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("mean_abs_diff: shape mismatch");
  return (a - b).cwiseAbs().sum() / static_cast<S>(a.size());
}

}  // namespace adaf
