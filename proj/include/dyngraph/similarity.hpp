#pragma once

#include <cstddef>

#include "dyngraph/matrix.hpp"
#include "dyngraph/sequence_graph.hpp"

namespace dyngraph {

enum class SimilarityKind { classic_dice, proposed_dice };

/// Dense m x m topology similarity with a zero diagonal.
struct SimilarityMatrix {
  Matrix values;
  SimilarityKind kind = SimilarityKind::proposed_dice;
};

/// |N(i) ∩ N(j)| over open neighbourhoods. Requires i != j.
std::size_t common_neighbors(const SegmentGraph& g, std::size_t i, std::size_t j);

/// 2 |N(i) ∩ N(j)| / (|N(i)| + |N(j)|); 0 when both neighbourhoods are empty.
double dice_classic(const SegmentGraph& g, std::size_t i, std::size_t j);

/// |N[i]| / (|N[i]| + |N[j]|) over closed neighbourhoods; always in (0, 1).
double degree_ratio(const SegmentGraph& g, std::size_t i, std::size_t j);

/// Degree-aware Dice matrix. Entry (i, j), i != j, scores the influence of
/// neighbour i on target j:
///
///   (Con(i, j) + D(i, j)) / (|N[j]| + 1)
///
/// so that, at equal common-neighbour counts, a higher-degree i scores higher.
/// The matrix is asymmetric in general. Computed over all pairs, not just edges.
SimilarityMatrix dice_matrix(const SegmentGraph& g);

/// Classic Dice over all pairs, zero diagonal.
SimilarityMatrix classic_dice_matrix(const SegmentGraph& g);

/// Reference for dice_matrix(): explicit std::set enumeration per pair, with
/// no shared precomputation. Intended for tests on small graphs (m <= 200).
SimilarityMatrix oracle_dice_matrix(const SegmentGraph& g);

}  // namespace dyngraph
