#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dyngraph/matrix.hpp"
#include "dyngraph/tape.hpp"

namespace dyngraph::ad {

/// Builds a scalar (1x1) output on `tape` from the given input variables.
using ScalarFunction = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

/// Compares tape gradients against central differences for every coordinate
/// of every input. Returns max |analytic - numeric| / max(1, |analytic|, |numeric|).
/// Throws std::domain_error when f is non-finite at any probed point.
double grad_check(const ScalarFunction& f, std::span<const Matrix> points, double step = 1e-5);

/// Single-input convenience overload.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Matrix& point,
                  double step = 1e-5);

}  // namespace dyngraph::ad
