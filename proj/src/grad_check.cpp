#include "dyngraph/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace dyngraph::ad {

namespace {

double evaluate(const ScalarFunction& f, std::span<const Matrix> points) {
  Tape tape;
  std::vector<Var> inputs;
  inputs.reserve(points.size());
  for (const Matrix& p : points) inputs.push_back(tape.constant(p));
  const Var out = f(tape, inputs);
  const Matrix& v = out.value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("grad_check: output must be 1x1");
  if (!std::isfinite(v(0, 0))) throw std::domain_error("grad_check: function value is not finite");
  return v(0, 0);
}

}  // namespace

double grad_check(const ScalarFunction& f, std::span<const Matrix> points, double step) {
  std::vector<Matrix> analytic;
  {
    Tape tape;
    std::vector<Var> inputs;
    for (const Matrix& p : points) inputs.push_back(tape.variable(p));
    const Var out = f(tape, inputs);
    if (!std::isfinite(out.value()(0, 0))) {
      throw std::domain_error("grad_check: function value is not finite");
    }
    tape.backward(out);
    for (Var v : inputs) analytic.push_back(tape.grad(v));
  }

  std::vector<Matrix> probe(points.begin(), points.end());
  double worst = 0.0;
  for (std::size_t k = 0; k < probe.size(); ++k) {
    auto coords = probe[k].data();
    for (std::size_t i = 0; i < coords.size(); ++i) {
      const double original = coords[i];
      coords[i] = original + step;
      const double up = evaluate(f, probe);
      coords[i] = original - step;
      const double down = evaluate(f, probe);
      coords[i] = original;

      const double numeric = (up - down) / (2.0 * step);
      const double exact = analytic[k].data()[i];
      const double denom = std::max({1.0, std::abs(exact), std::abs(numeric)});
      worst = std::max(worst, std::abs(exact - numeric) / denom);
    }
  }
  return worst;
}

double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& point, double step) {
  const ScalarFunction wrapped = [&f](Tape& t, std::span<const Var> in) { return f(t, in[0]); };
  return grad_check(wrapped, std::span<const Matrix>(&point, 1), step);
}

}  // namespace dyngraph::ad
