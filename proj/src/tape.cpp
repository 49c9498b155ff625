#include "dyngraph/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dyngraph::ad {

const Matrix& Var::value() const { return tape->value(*this); }
Matrix Var::grad() const { return tape->grad(*this); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::variable(Matrix value) { return record(std::move(value), true, nullptr); }

Var Tape::record(Matrix value, bool requires_grad, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), Matrix{}, requires_grad, std::move(backward)});
  return Var{this, nodes_.size() - 1};
}

Matrix Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return Matrix(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    require_same_shape(n.value, g, "Tape::accumulate");
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::accumulate(Var v, Matrix&& g) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    require_same_shape(n.value, g, "Tape::accumulate");
    n.grad = std::move(g);
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var out) {
  if (out.tape != this) throw std::invalid_argument("Tape::backward: variable from another tape");
  const Node& root = nodes_.at(out.id);
  if (root.value.rows() != 1 || root.value.cols() != 1) {
    throw ShapeError("Tape::backward: output must be 1x1, got " + root.value.shape_string());
  }
  for (Node& n : nodes_) n.grad = Matrix{};
  nodes_[out.id].grad = Matrix(1, 1, 1.0);

  for (std::size_t i = out.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || !n.requires_grad || n.grad.empty()) continue;
    // Callbacks only write to operands, which precede node i.
    n.backward(*this, n.grad);
  }
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw std::invalid_argument("ad: operands recorded on different tapes");
  }
  return *a.tape;
}

bool any_grad(Tape& t, Var a) { return t.requires_grad(a); }
bool any_grad(Tape& t, Var a, Var b) { return t.requires_grad(a) || t.requires_grad(b); }

}  // namespace

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record(dyngraph::add(a.value(), b.value()), any_grad(t, a, b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, g);
                  });
}

Var subtract(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record(dyngraph::subtract(a.value(), b.value()), any_grad(t, a, b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, dyngraph::scale(g, -1.0));
                  });
}

Var scale(Var a, double scalar) {
  Tape& t = *a.tape;
  return t.record(dyngraph::scale(a.value(), scalar), any_grad(t, a),
                  [a, scalar](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, dyngraph::scale(g, scalar));
                  });
}

Var hadamard(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record(dyngraph::hadamard(a.value(), b.value()), any_grad(t, a, b),
                  [a, b](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(a)) tp.accumulate(a, dyngraph::hadamard(g, b.value()));
                    if (tp.requires_grad(b)) tp.accumulate(b, dyngraph::hadamard(g, a.value()));
                  });
}

Var matmul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  return t.record(dyngraph::matmul(a.value(), b.value()), any_grad(t, a, b),
                  [a, b](Tape& tp, const Matrix& g) {
                    if (tp.requires_grad(a))
                      tp.accumulate(a, dyngraph::matmul(g, dyngraph::transpose(b.value())));
                    if (tp.requires_grad(b))
                      tp.accumulate(b, dyngraph::matmul(dyngraph::transpose(a.value()), g));
                  });
}

Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.record(dyngraph::transpose(a.value()), any_grad(t, a),
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a, dyngraph::transpose(g)); });
}

Var relu(Var a) {
  Tape& t = *a.tape;
  return t.record(dyngraph::relu(a.value()), any_grad(t, a), [a](Tape& tp, const Matrix& g) {
    Matrix ga = g;
    const auto x = a.value().data();
    auto d = ga.data();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (!(x[i] > 0.0)) d[i] = 0.0;
    tp.accumulate(a, std::move(ga));
  });
}

Var add_row(Var a, Var bias) {
  Tape& t = tape_of(a, bias);
  const Matrix& av = a.value();
  const Matrix& bv = bias.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw ShapeError("add_row: bias " + bv.shape_string() + " does not fit " + av.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv(0, c);
  return t.record(std::move(out), any_grad(t, a, bias), [a, bias](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g);
    if (tp.requires_grad(bias)) {
      Matrix gb(1, g.cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
      tp.accumulate(bias, std::move(gb));
    }
  });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  return t.record(Matrix(1, 1, dyngraph::sum(a.value())), any_grad(t, a),
                  [a](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, Matrix(a.rows(), a.cols(), g(0, 0)));
                  });
}

Var mean_rows(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  if (av.rows() == 0) throw ShapeError("mean_rows: no rows");
  const double inv = 1.0 / static_cast<double>(av.rows());
  Matrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
  out *= inv;
  return t.record(std::move(out), any_grad(t, a), [a, inv](Tape& tp, const Matrix& g) {
    Matrix ga(a.rows(), a.cols());
    for (std::size_t r = 0; r < ga.rows(); ++r)
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) = g(0, c) * inv;
    tp.accumulate(a, std::move(ga));
  });
}

Var mean(std::span<const Var> values) {
  if (values.empty()) throw std::invalid_argument("ad::mean: no values");
  Var acc = values.front();
  for (std::size_t i = 1; i < values.size(); ++i) acc = add(acc, values[i]);
  return values.size() == 1 ? acc : scale(acc, 1.0 / static_cast<double>(values.size()));
}

Var vstack(std::span<const Var> rows) {
  if (rows.empty()) throw std::invalid_argument("vstack: no operands");
  Tape& t = *rows.front().tape;
  const std::size_t cols = rows.front().cols();
  std::size_t total = 0;
  bool needs_grad = false;
  for (Var v : rows) {
    if (v.tape != &t) throw std::invalid_argument("vstack: operands on different tapes");
    if (v.cols() != cols) throw ShapeError("vstack: column mismatch " + v.value().shape_string());
    total += v.rows();
    needs_grad = needs_grad || t.requires_grad(v);
  }
  Matrix out(total, cols);
  std::size_t offset = 0;
  for (Var v : rows) {
    const Matrix& m = v.value();
    std::copy(m.data().begin(), m.data().end(), out.data().begin() + offset * cols);
    offset += m.rows();
  }
  std::vector<Var> parts(rows.begin(), rows.end());
  return t.record(std::move(out), needs_grad, [parts, cols](Tape& tp, const Matrix& g) {
    std::size_t off = 0;
    for (Var v : parts) {
      const std::size_t r = v.rows();
      if (tp.requires_grad(v)) {
        std::vector<double> chunk(g.data().begin() + off * cols,
                                  g.data().begin() + (off + r) * cols);
        tp.accumulate(v, Matrix(r, cols, std::move(chunk)));
      }
      off += r;
    }
  });
}

Var sym_normalize(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  if (av.rows() != av.cols()) throw ShapeError("sym_normalize: not square " + av.shape_string());
  const std::size_t n = av.rows();
  std::vector<double> degree(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) degree[i] += av(i, j);
    if (!(degree[i] > 0.0)) {
      throw std::domain_error("sym_normalize: row " + std::to_string(i) +
                              " has non-positive sum; add self-loops first");
    }
  }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) inv_sqrt[i] = 1.0 / std::sqrt(degree[i]);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = av(i, j) * inv_sqrt[i] * inv_sqrt[j];
  const Var self{&t, t.size()};
  return t.record(std::move(out), any_grad(t, a),
                  [a, self, degree, inv_sqrt, n](Tape& tp, const Matrix& g) {
                    const Matrix& y = self.value();
                    // Each degree d_k enters row k and column k of the output.
                    std::vector<double> g_degree(n, 0.0);
                    for (std::size_t i = 0; i < n; ++i) {
                      for (std::size_t j = 0; j < n; ++j) {
                        const double gy = g(i, j) * y(i, j);
                        g_degree[i] += gy;
                        g_degree[j] += gy;
                      }
                    }
                    Matrix ga(n, n);
                    for (std::size_t k = 0; k < n; ++k) {
                      const double dk = -0.5 * g_degree[k] / degree[k];
                      for (std::size_t l = 0; l < n; ++l)
                        ga(k, l) = g(k, l) * inv_sqrt[k] * inv_sqrt[l] + dk;
                    }
                    tp.accumulate(a, std::move(ga));
                  });
}

Var softmax_cross_entropy(Var logits, std::span<const std::size_t> labels) {
  Tape& t = *logits.tape;
  const Matrix& lv = logits.value();
  const double loss = dyngraph::softmax_cross_entropy(lv, labels);
  std::vector<std::size_t> owned(labels.begin(), labels.end());
  return t.record(Matrix(1, 1, loss), any_grad(t, logits),
                  [logits, owned](Tape& tp, const Matrix& g) {
                    Matrix probs = softmax_rows(logits.value());
                    const double w = g(0, 0) / static_cast<double>(probs.rows());
                    for (std::size_t r = 0; r < probs.rows(); ++r) probs(r, owned[r]) -= 1.0;
                    probs *= w;
                    tp.accumulate(logits, std::move(probs));
                  });
}

}  // namespace dyngraph::ad
