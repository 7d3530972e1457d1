#include "spline_basis.hpp"

#include <algorithm>
#include <limits>

#include "errors.hpp"

namespace mvs {

Eigen::VectorXd SplineBasis::evaluate(double s) const {
  Eigen::VectorXd v(size());
  for (int c = 0; c < size(); ++c)
    v[c] = std::max(s - knots[static_cast<std::size_t>(c)], 0.0);
  return v;
}

Eigen::MatrixXd SplineBasis::design(const Eigen::VectorXd& s) const {
  Eigen::MatrixXd b(s.size(), size());
  for (Eigen::Index i = 0; i < s.size(); ++i) b.row(i) = evaluate(s[i]).transpose();
  return b;
}

SplineBasis make_knots(KnotRule rule, int n_knots, double lo, double hi,
                       std::span<const double> s_values) {
  if (n_knots < 1) fail_invalid("knot count must be at least 1");
  SplineBasis basis;
  switch (rule) {
    case KnotRule::Explicit: {
      basis.knots.assign(s_values.begin(), s_values.end());
      if (static_cast<int>(basis.knots.size()) != n_knots)
        fail_invalid("explicit knot list length differs from knot count");
      for (std::size_t c = 1; c < basis.knots.size(); ++c)
        if (!(basis.knots[c - 1] < basis.knots[c]))
          fail_invalid("explicit knots must be strictly increasing");
      return basis;
    }
    case KnotRule::ObservedRange: {
      if (s_values.empty()) fail_invalid("cannot place knots: no s values");
      auto [mn, mx] = std::minmax_element(s_values.begin(), s_values.end());
      lo = *mn;
      hi = *mx;
      break;
    }
    case KnotRule::Range:
      break;
  }
  if (!(lo < hi)) fail_invalid("cannot place knots: degenerate s range");
  const double step = (hi - lo) / (n_knots + 1);
  basis.knots.resize(static_cast<std::size_t>(n_knots));
  for (int c = 1; c <= n_knots; ++c)
    basis.knots[static_cast<std::size_t>(c - 1)] = lo + c * step;
  return basis;
}

}  // namespace mvs
