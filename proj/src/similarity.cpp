#include "dyngraph/similarity.hpp"

#include <algorithm>
#include <iterator>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace dyngraph {

namespace {

void require_pair(const SegmentGraph& g, std::size_t i, std::size_t j, const char* what) {
  if (i == j) throw std::invalid_argument(std::string(what) + ": i == j (" + std::to_string(i) + ")");
  if (i >= g.node_count || j >= g.node_count) {
    throw std::out_of_range(std::string(what) + ": node index out of range");
  }
}

std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  std::size_t count = 0;
  auto ia = a.begin();
  auto ib = b.begin();
  while (ia != a.end() && ib != b.end()) {
    if (*ia < *ib) {
      ++ia;
    } else if (*ib < *ia) {
      ++ib;
    } else {
      ++count;
      ++ia;
      ++ib;
    }
  }
  return count;
}

double proposed_score(std::size_t common, std::size_t closed_i, std::size_t closed_j) {
  const double ratio = static_cast<double>(closed_i) / static_cast<double>(closed_i + closed_j);
  return (static_cast<double>(common) + ratio) / static_cast<double>(closed_j + 1);
}

}  // namespace

std::size_t common_neighbors(const SegmentGraph& g, std::size_t i, std::size_t j) {
  require_pair(g, i, j, "common_neighbors");
  const auto lists = g.neighbor_lists();
  return intersection_size(lists[i], lists[j]);
}

double dice_classic(const SegmentGraph& g, std::size_t i, std::size_t j) {
  require_pair(g, i, j, "dice_classic");
  const auto lists = g.neighbor_lists();
  const std::size_t denom = lists[i].size() + lists[j].size();
  if (denom == 0) return 0.0;
  return 2.0 * static_cast<double>(intersection_size(lists[i], lists[j])) /
         static_cast<double>(denom);
}

double degree_ratio(const SegmentGraph& g, std::size_t i, std::size_t j) {
  require_pair(g, i, j, "degree_ratio");
  const auto lists = g.neighbor_lists();
  const std::size_t ci = lists[i].size() + 1;
  const std::size_t cj = lists[j].size() + 1;
  return static_cast<double>(ci) / static_cast<double>(ci + cj);
}

SimilarityMatrix dice_matrix(const SegmentGraph& g) {
  g.validate();
  const std::size_t m = g.node_count;
  const auto lists = g.neighbor_lists();
  SimilarityMatrix out{Matrix(m, m), SimilarityKind::proposed_dice};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      out.values(i, j) = proposed_score(intersection_size(lists[i], lists[j]),
                                        lists[i].size() + 1, lists[j].size() + 1);
    }
  }
  return out;
}

SimilarityMatrix classic_dice_matrix(const SegmentGraph& g) {
  g.validate();
  const std::size_t m = g.node_count;
  const auto lists = g.neighbor_lists();
  SimilarityMatrix out{Matrix(m, m), SimilarityKind::classic_dice};
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const std::size_t denom = lists[i].size() + lists[j].size();
      if (denom == 0) continue;
      out.values(i, j) = 2.0 * static_cast<double>(intersection_size(lists[i], lists[j])) /
                         static_cast<double>(denom);
    }
  }
  return out;
}

SimilarityMatrix oracle_dice_matrix(const SegmentGraph& g) {
  const std::size_t m = g.node_count;
  SimilarityMatrix out{Matrix(m, m), SimilarityKind::proposed_dice};

  const auto neighbourhood = [&g](std::size_t v) {
    std::set<std::size_t> n;
    for (const auto& [a, b] : g.edges) {
      if (a == v) n.insert(b);
      if (b == v) n.insert(a);
    }
    return n;
  };

  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      if (i == j) continue;
      const std::set<std::size_t> ni = neighbourhood(i);
      const std::set<std::size_t> nj = neighbourhood(j);
      std::set<std::size_t> shared;
      std::set_intersection(ni.begin(), ni.end(), nj.begin(), nj.end(),
                            std::inserter(shared, shared.begin()));
      std::set<std::size_t> closed_i = ni;
      closed_i.insert(i);
      std::set<std::size_t> closed_j = nj;
      closed_j.insert(j);
      // Same evaluation order as dice_matrix, so results agree bit for bit.
      const double ratio = static_cast<double>(closed_i.size()) /
                           static_cast<double>(closed_i.size() + closed_j.size());
      out.values(i, j) = (static_cast<double>(shared.size()) + ratio) /
                         static_cast<double>(closed_j.size() + 1);
    }
  }
  return out;
}

}  // namespace dyngraph
