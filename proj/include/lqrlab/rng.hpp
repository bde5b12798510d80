#pragma once

#include <cstdint>
#include <random>

#include "lqrlab/matlib.hpp"

namespace lqrlab {

/// SplitMix64 finalizer, used to decorrelate seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Seeded random source. Identical seeds give identical sequences.
///
/// Independent streams are derived with substream(id): the child seed is
/// mix64(seed ^ mix64(id + 1)), so the parent state is never consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const { return seed_; }

  RngStream substream(std::uint64_t id) const { return RngStream(mix64(seed_ ^ mix64(id + 1))); }

  double normal() { return gauss_(engine_); }

  double uniform() { return unit_(engine_); }

  Vector normal_vector(Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = gauss_(engine_);
    return v;
  }

  Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    // row-major fill so draws match the config's nested-array layout
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = gauss_(engine_);
    return m;
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> gauss_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

}  // namespace lqrlab
