#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>

#include "dyngraph/matrix.hpp"
#include "dyngraph/sequence_graph.hpp"

namespace testing {

inline dyngraph::Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols,
                                      double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  dyngraph::Matrix m(rows, cols);
  for (double& v : m.data()) v = dist(rng);
  return m;
}

/// Erdos-Renyi graph: every unordered pair is an edge with probability `density`.
inline dyngraph::SegmentGraph random_graph(std::mt19937_64& rng, std::size_t m, double density) {
  std::bernoulli_distribution coin(density);
  dyngraph::SegmentGraph g;
  g.node_count = m;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j)
      if (coin(rng)) g.edges.insert(dyngraph::make_edge(i, j));
  return g;
}

inline dyngraph::SegmentGraph chain_graph(std::size_t m) {
  dyngraph::SegmentGraph g;
  g.node_count = m;
  for (std::size_t i = 0; i + 1 < m; ++i) g.edges.insert(dyngraph::make_edge(i, i + 1));
  return g;
}

/// Random symmetric matrix with entries in [0, hi) and zero diagonal.
inline dyngraph::Matrix random_symmetric(std::mt19937_64& rng, std::size_t n, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(0.0, hi);
  dyngraph::Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) a(i, j) = a(j, i) = dist(rng);
  return a;
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
inline double spectral_radius(const dyngraph::Matrix& a, std::size_t iterations = 2000) {
  dyngraph::Matrix v(a.rows(), 1, 1.0);
  double lambda = 0.0;
  for (std::size_t k = 0; k < iterations; ++k) {
    dyngraph::Matrix w = dyngraph::matmul(a, v);
    const double norm = std::sqrt(dyngraph::frobenius_norm_squared(w));
    if (norm == 0.0) return 0.0;
    lambda = norm / std::sqrt(dyngraph::frobenius_norm_squared(v));
    v = dyngraph::scale(w, 1.0 / norm);
  }
  return lambda;
}

}  // namespace testing
