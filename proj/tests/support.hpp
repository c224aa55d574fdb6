#pragma once

#include <random>

#include "sfm/feature_matrix.hpp"
#include "sfm/random.hpp"

namespace sfm::test {

/// Standard normal N x n matrix from a seeded stream.
inline Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, sd);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Vector gaussian_vector(Eigen::Index n, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

/// Probe at a random direction and a log-uniform radius in [1e-2, 1e3]
/// around `center`.
inline Vector multiscale_probe(const Vector& center, Rng& rng) {
  std::uniform_real_distribution<double> log_radius(-2.0, 3.0);
  Vector dir = gaussian_vector(center.size(), rng);
  dir.normalize();
  return center + std::pow(10.0, log_radius(rng)) * dir;
}

}  // namespace sfm::test
