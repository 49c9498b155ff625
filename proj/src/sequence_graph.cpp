#include "dyngraph/sequence_graph.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dyngraph {

void EdgePolicy::validate() const {
  if (min_random_distance <= neighbor_radius) {
    throw std::invalid_argument("EdgePolicy: min_random_distance (" +
                                std::to_string(min_random_distance) +
                                ") must exceed neighbor_radius (" +
                                std::to_string(neighbor_radius) + ")");
  }
}

std::vector<std::vector<std::size_t>> SegmentGraph::neighbor_lists() const {
  std::vector<std::vector<std::size_t>> out(node_count);
  for (const auto& [i, j] : edges) {
    out[i].push_back(j);
    out[j].push_back(i);
  }
  for (auto& list : out) std::sort(list.begin(), list.end());
  return out;
}

void SegmentGraph::validate() const {
  for (const auto& [i, j] : edges) {
    if (i == j) throw std::invalid_argument("SegmentGraph: self-edge at node " + std::to_string(i));
    if (i >= node_count || j >= node_count) {
      throw std::invalid_argument("SegmentGraph: edge (" + std::to_string(i) + ", " +
                                  std::to_string(j) + ") out of range for " +
                                  std::to_string(node_count) + " nodes");
    }
  }
  if (!features.empty() && features.rows() != node_count) {
    throw ShapeError("SegmentGraph: " + features.shape_string() + " features for " +
                     std::to_string(node_count) + " nodes");
  }
}

void DynamicGraph::validate() const {
  if (segments.empty()) throw std::invalid_argument("DynamicGraph: no segments");
  for (const SegmentGraph& g : segments) {
    g.validate();
    if (g.node_count != node_count() || g.features.cols() != feature_dim()) {
      throw ShapeError("DynamicGraph: segments disagree on node count or feature dimension");
    }
  }
}

std::size_t segment_count(std::size_t frames, std::size_t window, std::size_t hop) {
  if (frames < window) return 1;
  return (frames - window) / hop + 1;
}

DynamicGraph segment(const FrameSequence& seq, std::size_t window, std::size_t hop) {
  if (window < 2) throw std::invalid_argument("segment: window must be >= 2");
  if (hop < 1) throw std::invalid_argument("segment: hop must be >= 1");
  if (seq.frames() == 0 || seq.feature_dim() == 0) {
    throw std::invalid_argument("segment: empty sequence '" + seq.id + "'");
  }
  const std::size_t p = seq.feature_dim();
  const std::size_t count = segment_count(seq.frames(), window, hop);

  DynamicGraph dg;
  dg.label = seq.label;
  dg.segments.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    SegmentGraph g;
    g.node_count = window;
    g.segment_index = s;
    g.features = Matrix(window, p);
    const std::size_t start = s * hop;
    const std::size_t available = std::min(window, seq.frames() - start);
    for (std::size_t r = 0; r < available; ++r) {
      const auto src = seq.features.row(start + r);
      std::copy(src.begin(), src.end(), g.features.row(r).begin());
    }
    dg.segments.push_back(std::move(g));
  }
  return dg;
}

EdgeSet build_topology(std::size_t node_count, const EdgePolicy& policy) {
  if (node_count < 2) throw std::invalid_argument("build_topology: need at least 2 nodes");
  policy.validate();

  EdgeSet edges;
  for (std::size_t i = 0; i < node_count; ++i)
    for (std::size_t d = 1; d <= policy.neighbor_radius && i + d < node_count; ++d)
      edges.insert({i, i + d});

  if (policy.random_edges_per_node == 0) return edges;

  std::mt19937_64 rng(policy.seed);
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < node_count; ++i) {
    candidates.clear();
    for (std::size_t j = 0; j < node_count; ++j) {
      const std::size_t dist = i > j ? i - j : j - i;
      if (dist >= policy.min_random_distance) candidates.push_back(j);
    }
    const std::size_t take = std::min(policy.random_edges_per_node, candidates.size());
    // Partial Fisher-Yates: the first `take` slots become a uniform sample.
    for (std::size_t k = 0; k < take; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, candidates.size() - 1);
      std::swap(candidates[k], candidates[pick(rng)]);
      edges.insert(make_edge(i, candidates[k]));
    }
  }
  return edges;
}

std::uint64_t segment_seed(std::uint64_t base, std::size_t segment_index) {
  // splitmix64 finaliser over the combined value
  std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(segment_index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

EdgeSet segment_topology(std::size_t node_count, const EdgePolicy& policy,
                         std::size_t segment_index) {
  EdgePolicy local = policy;
  local.seed = segment_seed(policy.seed, segment_index);
  return build_topology(node_count, local);
}

DynamicGraph build_dynamic_graph(const FrameSequence& seq, std::size_t window, std::size_t hop,
                                 const EdgePolicy& policy) {
  DynamicGraph dg = segment(seq, window, hop);
  for (SegmentGraph& g : dg.segments)
    g.edges = segment_topology(g.node_count, policy, g.segment_index);
  return dg;
}

namespace {

template <typename WeightFn>
Matrix edge_weighted(const SegmentGraph& g, WeightFn weight) {
  g.validate();
  Matrix a(g.node_count, g.node_count);
  for (const auto& [i, j] : g.edges) {
    const double w = weight(j - i);
    a(i, j) = w;
    a(j, i) = w;
  }
  return a;
}

}  // namespace

Matrix binary_adjacency(const SegmentGraph& g) {
  return edge_weighted(g, [](std::size_t) { return 1.0; });
}

Matrix weighted_distance_adjacency(const SegmentGraph& g) {
  return edge_weighted(g, [](std::size_t d) { return 1.0 / (1.0 + static_cast<double>(d)); });
}

Matrix positional_adjacency(const SegmentGraph& g, PositionalMode mode) {
  if (mode == PositionalMode::squared) {
    return edge_weighted(g, [](std::size_t d) {
      const double x = static_cast<double>(d);
      return x * x;
    });
  }
  return edge_weighted(g, [](std::size_t d) {
    const double x = static_cast<double>(d);
    return 1.0 / (x * x);
  });
}

Matrix degree_matrix(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("degree_matrix: not square " + a.shape_string());
  Matrix d(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      if (a(i, j) < 0.0) {
        throw std::invalid_argument("degree_matrix: negative entry at (" + std::to_string(i) +
                                    ", " + std::to_string(j) + ")");
      }
      total += a(i, j);
    }
    d(i, i) = total;
  }
  return d;
}

Matrix sym_normalize(const Matrix& a) {
  const Matrix d = degree_matrix(a);
  const std::size_t n = a.rows();
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(d(i, i) > 0.0)) {
      throw std::domain_error("sym_normalize: row " + std::to_string(i) +
                              " sums to zero; add self-loops first");
    }
    inv_sqrt[i] = 1.0 / std::sqrt(d(i, i));
  }
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = a(i, j) * inv_sqrt[i] * inv_sqrt[j];
  return out;
}

void write_edge_list(std::ostream& os, const EdgeSet& edges) {
  for (const auto& [i, j] : edges) os << i << ' ' << j << '\n';
}

EdgeSet read_edge_list(std::istream& is, std::size_t node_count) {
  EdgeSet edges;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream fields(line);
    long long i = -1;
    long long j = -1;
    std::string rest;
    if (!(fields >> i >> j) || (fields >> rest)) {
      throw std::invalid_argument("edge list line " + std::to_string(line_no) +
                                  ": expected two node indices, got '" + line + "'");
    }
    if (i < 0 || j < 0 || static_cast<std::size_t>(i) >= node_count ||
        static_cast<std::size_t>(j) >= node_count) {
      throw std::invalid_argument("edge list line " + std::to_string(line_no) +
                                  ": node index out of range [0, " +
                                  std::to_string(node_count) + ")");
    }
    if (i == j) {
      throw std::invalid_argument("edge list line " + std::to_string(line_no) + ": self-loop");
    }
    edges.insert(make_edge(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
  }
  return edges;
}

}  // namespace dyngraph
