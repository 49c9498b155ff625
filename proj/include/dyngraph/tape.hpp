#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dyngraph/matrix.hpp"

namespace dyngraph::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Matrix grad() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Define-by-run reverse-mode tape over dense matrices.
///
/// Every operation appends one node whose operands are already on the tape,
/// so node order is a topological order. backward() walks the nodes once in
/// reverse. A tape is single-threaded; build one per forward/backward pass.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Matrix& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Records a leaf that does not receive a gradient.
  Var constant(Matrix value);
  /// Records a leaf whose gradient is accumulated by backward().
  Var variable(Matrix value);

  /// Appends an interior node. `backward` must push gradients to operands via accumulate().
  Var record(Matrix value, bool requires_grad, BackwardFn backward);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() output w.r.t. `v`; a zero matrix when none reached it.
  Matrix grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  void accumulate(Var v, const Matrix& g);
  void accumulate(Var v, Matrix&& g);

  /// Seeds d(out)/d(out) = 1 and propagates. `out` must be 1x1.
  void backward(Var out);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
};

Var add(Var a, Var b);
Var subtract(Var a, Var b);
Var scale(Var a, double scalar);
Var hadamard(Var a, Var b);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var relu(Var a);

/// Adds the 1xC row `bias` to every row of `a`.
Var add_row(Var a, Var bias);

/// Scalar sum of all entries, as a 1x1 value.
Var sum(Var a);

/// Column means: 1xC average over the rows of `a`.
Var mean_rows(Var a);

/// Elementwise mean of equally shaped values.
Var mean(std::span<const Var> values);

/// Stacks values vertically; all must share a column count.
Var vstack(std::span<const Var> rows);

/// D^{-1/2} A D^{-1/2} with D the row sums of `a`. Every row sum must be > 0.
Var sym_normalize(Var a);

/// Mean over rows of -log softmax(logits)[label], as a 1x1 value.
Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels);

}  // namespace dyngraph::ad
