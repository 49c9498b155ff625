#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "dyngraph/matrix.hpp"

namespace dyngraph {

/// One utterance: T frames of p features each, plus its class.
struct FrameSequence {
  Matrix features;
  std::size_t label = 0;
  std::string id;

  std::size_t frames() const noexcept { return features.rows(); }
  std::size_t feature_dim() const noexcept { return features.cols(); }
};

/// Unordered node pair stored as (min, max).
using Edge = std::pair<std::size_t, std::size_t>;
using EdgeSet = std::set<Edge>;

inline Edge make_edge(std::size_t i, std::size_t j) {
  return i < j ? Edge{i, j} : Edge{j, i};
}

/// How nodes of a window are wired: a temporal band plus seeded long-range shortcuts.
struct EdgePolicy {
  std::size_t neighbor_radius = 1;
  std::size_t random_edges_per_node = 2;
  std::size_t min_random_distance = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Graph over the frames of one window.
struct SegmentGraph {
  std::size_t node_count = 0;
  EdgeSet edges;
  Matrix features;  // node_count x p
  std::size_t segment_index = 0;

  /// Sorted open neighbourhood of every node.
  std::vector<std::vector<std::size_t>> neighbor_lists() const;
  void validate() const;
};

/// Ordered per-window graphs of one utterance.
struct DynamicGraph {
  std::vector<SegmentGraph> segments;
  std::size_t label = 0;

  std::size_t node_count() const { return segments.empty() ? 0 : segments.front().node_count; }
  std::size_t feature_dim() const {
    return segments.empty() ? 0 : segments.front().features.cols();
  }
  void validate() const;
};

/// Number of windows segment() produces for T frames.
std::size_t segment_count(std::size_t frames, std::size_t window, std::size_t hop);

/// Slides a window of `window` frames with stride `hop` over the sequence.
/// Segment s covers frames [s*hop, s*hop + window). A sequence shorter than
/// the window yields one segment, zero-padded at the tail. Edge sets are left
/// empty; see build_dynamic_graph().
DynamicGraph segment(const FrameSequence& seq, std::size_t window, std::size_t hop);

/// Temporal band |i-j| <= radius, plus up to `random_edges_per_node` seeded
/// partners per node at index distance >= min_random_distance.
EdgeSet build_topology(std::size_t node_count, const EdgePolicy& policy);

/// Seed for the topology of segment `segment_index`, mixed from the policy seed.
std::uint64_t segment_seed(std::uint64_t base, std::size_t segment_index);

/// Topology of window `segment_index` under `policy`. Depends only on
/// (node_count, policy, segment_index), so every utterance shares it.
EdgeSet segment_topology(std::size_t node_count, const EdgePolicy& policy,
                         std::size_t segment_index);

/// segment() followed by segment_topology() for each window.
DynamicGraph build_dynamic_graph(const FrameSequence& seq, std::size_t window, std::size_t hop,
                                 const EdgePolicy& policy);

enum class PositionalMode { squared, inverse_squared };

Matrix binary_adjacency(const SegmentGraph& g);

/// 1 / (1 + |i-j|) on edges.
Matrix weighted_distance_adjacency(const SegmentGraph& g);

/// (i-j)^2 on edges, or 1/(i-j)^2 in inverse_squared mode. Zero elsewhere.
Matrix positional_adjacency(const SegmentGraph& g,
                            PositionalMode mode = PositionalMode::squared);

/// Diagonal matrix of row sums. Entries must be non-negative.
Matrix degree_matrix(const Matrix& a);

/// D^{-1/2} A D^{-1/2} with D the row sums of `a`. Throws on any row sum <= 0.
Matrix sym_normalize(const Matrix& a);

/// Writes "i j" per line, ascending.
void write_edge_list(std::ostream& os, const EdgeSet& edges);

/// Parses "i j" lines. Blank lines and lines starting with '#' are skipped.
/// Throws std::invalid_argument on malformed lines, self-loops or indices >= node_count.
EdgeSet read_edge_list(std::istream& is, std::size_t node_count);

}  // namespace dyngraph
