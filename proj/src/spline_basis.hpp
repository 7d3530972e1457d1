#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace mvs {

enum class KnotRule {
  Range,          // equally spaced over a given [lo, hi]
  ObservedRange,  // equally spaced over [min(s), max(s)]
  Explicit,       // knots given verbatim
};

// Truncated-line spline basis: column c evaluates (s - knot_c)_+.
// Piecewise linear in s, continuous, with slope changes exactly at the knots;
// values outside the knot range extrapolate linearly.
struct SplineBasis {
  std::vector<double> knots;  // strictly increasing

  int size() const { return static_cast<int>(knots.size()); }

  Eigen::VectorXd evaluate(double s) const;

  // N x C design block with row i = evaluate(s[i]).
  Eigen::MatrixXd design(const Eigen::VectorXd& s) const;
};

// Knot construction. Equally spaced rules place the C knots strictly inside
// the interval: knot_c = lo + c*(hi-lo)/(C+1), c = 1..C, so no knot ever sits
// on an endpoint (an endpoint knot yields an all-zero or collinear column).
SplineBasis make_knots(KnotRule rule, int n_knots, double lo, double hi,
                       std::span<const double> s_values);

}  // namespace mvs
