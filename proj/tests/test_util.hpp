#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "ualqe/completion.hpp"
#include "ualqe/linalg.hpp"

namespace ualqe::test {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  Matrix m(r, c);
  for (double& x : m.data()) x = n(rng);
  return m;
}

inline Matrix random_low_rank(std::size_t r, std::size_t c, std::size_t rank, std::mt19937_64& rng) {
  return random_matrix(r, rank, rng) * random_matrix(rank, c, rng);
}

inline Matrix outer(const std::vector<double>& u, const std::vector<double>& v) {
  Matrix m(u.size(), v.size());
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = 0; j < v.size(); ++j) m(i, j) = u[i] * v[j];
  return m;
}

inline double rel_error(const Matrix& a, const Matrix& b) { return (a - b).frobenius_norm() / b.frobenius_norm(); }

/// Each entry removed independently with probability `fraction`, redrawn until
/// every row and column keeps an observed entry.
inline std::vector<Index2> random_feasible_removal(std::size_t r, std::size_t c, double fraction, std::mt19937_64& rng) {
  std::bernoulli_distribution drop(fraction);
  for (;;) {
    std::vector<Index2> removed;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        if (drop(rng)) removed.emplace_back(i, j);
    if (ObservationMask::complement_of(r, c, removed).feasible()) return removed;
  }
}

/// Relative Frobenius error restricted to the removed entries.
inline double removed_error(const Matrix& estimate, const Matrix& truth, const std::vector<Index2>& removed) {
  double num = 0.0, den = 0.0;
  for (const auto& [i, j] : removed) {
    num += (estimate(i, j) - truth(i, j)) * (estimate(i, j) - truth(i, j));
    den += truth(i, j) * truth(i, j);
  }
  return std::sqrt(num / den);
}

}  // namespace ualqe::test
