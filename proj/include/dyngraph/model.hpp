#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dyngraph/matrix.hpp"
#include "dyngraph/sequence_graph.hpp"
#include "dyngraph/similarity.hpp"
#include "dyngraph/tape.hpp"

namespace dyngraph {

/// Which structure sources feed the per-segment adjacency.
enum class AdjacencyVariant { binary, weighted, learn_only, dice_only, full };

std::string_view to_string(AdjacencyVariant v);
/// Throws std::invalid_argument on unknown names.
AdjacencyVariant parse_variant(std::string_view name);
std::string_view to_string(PositionalMode m);
PositionalMode parse_positional_mode(std::string_view name);

inline constexpr AdjacencyVariant kAllVariants[] = {
    AdjacencyVariant::binary, AdjacencyVariant::weighted, AdjacencyVariant::learn_only,
    AdjacencyVariant::dice_only, AdjacencyVariant::full};

struct AdjacencyConfig {
  double phi = 0.6;
  AdjacencyVariant variant = AdjacencyVariant::full;
  PositionalMode positional_mode = PositionalMode::squared;

  void validate() const;
};

/// All learnable tensors.
///
/// `w0` seeds the weight recurrence (p x q). `a_learn` (m x m) is kept in
/// [0, 1] by project() and symmetrised as (A + A^T)/2 wherever it enters an
/// adjacency. `extra_layers` (q x q each) deepen the per-segment convolution
/// and are empty for the default single-layer model.
struct ModelParams {
  Matrix w0;
  Matrix a_learn;
  Matrix head_w;
  Matrix head_b;
  std::vector<Matrix> extra_layers;

  std::size_t node_count() const { return a_learn.rows(); }
  std::size_t feature_dim() const { return w0.rows(); }
  std::size_t hidden_dim() const { return w0.cols(); }
  std::size_t num_classes() const { return head_w.cols(); }

  /// Glorot-uniform weights, zero bias, `a_learn_init` copied and projected.
  static ModelParams initialize(std::size_t feature_dim, std::size_t hidden_dim,
                                std::size_t num_classes, const Matrix& a_learn_init,
                                std::size_t extra_layers, std::uint64_t seed);

  /// Tensors in declaration order: w0, a_learn, head_w, head_b, extra layers.
  std::vector<Matrix*> tensors();
  std::vector<const Matrix*> tensors() const;

  /// Clamps a_learn into [0, 1].
  void project();
  void validate() const;
};

/// The fixed (non-learned) adjacency pieces of one segment topology.
struct SegmentStructure {
  std::size_t segment_index = 0;
  Matrix binary;
  Matrix weighted;
  Matrix positional;
  SimilarityMatrix dice;

  static SegmentStructure build(const SegmentGraph& g, PositionalMode mode);
};

std::vector<SegmentStructure> build_structures(const DynamicGraph& dg, PositionalMode mode);

/// Intermediate values of one forward pass.
struct ForwardState {
  std::vector<Matrix> weights;  // W^s used by segment s
  std::vector<Matrix> hidden;   // H^s, m x q, non-negative
  Matrix embedding;             // 1 x q
  Matrix logits;                // 1 x C
};

/// A^s for the configured variant:
///   full       positional + phi * dice + sym(A_learn) + I
///   dice_only  positional + phi * dice + I
///   learn_only sym(A_learn) + I
///   binary     binary + I
///   weighted   weighted-distance + I
Matrix composite_adjacency(const SegmentGraph& g, const SimilarityMatrix& dice,
                           const ModelParams& params, const AdjacencyConfig& cfg);

/// ReLU(D^{-1/2} A D^{-1/2} X W) with D the row sums of `a` (which already holds self-loops).
Matrix segment_conv(const Matrix& x, const Matrix& a, const Matrix& w);

/// Carries the convolution weight to the next segment:
///
///   W' = ReLU(W + (1/m) X^T Â X W),   Â = D^{-1/2} A D^{-1/2}
///
/// The update X^T Â X W is p x q like W, so it can be added to it; X is m x p.
Matrix weight_recurrence(const Matrix& w, const Matrix& a, const Matrix& x);

/// Classic GCN layer ReLU(D^{-1/2} (A + I) D^{-1/2} H W), D the row sums of A + I.
Matrix gcn_layer(const Matrix& h, const Matrix& a, const Matrix& w);

/// Full model on one utterance. Segment topologies are taken from `dg`.
ForwardState forward(const DynamicGraph& dg, const ModelParams& params,
                     const AdjacencyConfig& cfg);

/// Predicted class per utterance; structures are shared across utterances.
std::size_t predict(const DynamicGraph& dg, std::span<const SegmentStructure> structures,
                    const ModelParams& params, const AdjacencyConfig& cfg);

/// Raised by load_model() on malformed or incompatible files.
class ModelFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary layout, little-endian:
///   char[4] "DGRL", u32 version (1), u32 m, u32 p, u32 q, u32 C, u32 extra layer count,
///   then f64 row-major blobs: w0, a_learn, head_w, head_b, extra layers.
void save_model(std::ostream& os, const ModelParams& params);
ModelParams load_model(std::istream& is);
void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

namespace ad {

/// ModelParams recorded on a tape.
struct ParamVars {
  Var w0;
  Var a_learn;
  Var head_w;
  Var head_b;
  std::vector<Var> extra_layers;

  std::vector<Var> all() const;
};

ParamVars record_params(Tape& tape, const ModelParams& params, bool trainable);

Var composite_adjacency(Tape& tape, const SegmentStructure& s, Var a_learn,
                        const AdjacencyConfig& cfg);
Var segment_conv(Var x, Var a, Var w);
Var weight_recurrence(Var w, Var a, Var x);

struct ForwardVars {
  std::vector<Var> weights;
  std::vector<Var> hidden;
  Var embedding;
  Var logits;
};

/// Differentiable forward over per-segment features and structures (same length).
ForwardVars forward(Tape& tape, const ParamVars& params, std::span<const Matrix> features,
                    std::span<const SegmentStructure> structures, const AdjacencyConfig& cfg);

}  // namespace ad

}  // namespace dyngraph
