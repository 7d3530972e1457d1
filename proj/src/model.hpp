#pragma once

#include <Eigen/Dense>
#include <vector>

#include "spline_basis.hpp"

namespace mvs {

enum class Estimation { ML, REML };

// What to fit: the null model (include_s = false) drops every s term, the
// alternative adds the linear s effect per outcome plus the penalized spline
// random effects. n_knots and the knot rule are ignored under the null.
struct ModelSpec {
  bool include_s = false;
  int n_knots = 30;
  KnotRule knot_rule = KnotRule::ObservedRange;
  double knot_lo = 0.0;  // used by KnotRule::Range
  double knot_hi = 0.0;
  std::vector<double> explicit_knots;  // used by KnotRule::Explicit
  Estimation estimation = Estimation::ML;
  double convergence_tol = 1e-8;
  int max_iter = 500;

  static ModelSpec null_model(Estimation est = Estimation::ML) {
    ModelSpec spec;
    spec.include_s = false;
    spec.estimation = est;
    return spec;
  }

  static ModelSpec alternative(int n_knots, KnotRule rule, double lo = 0.0,
                               double hi = 0.0, Estimation est = Estimation::ML) {
    ModelSpec spec;
    spec.include_s = true;
    spec.n_knots = n_knots;
    spec.knot_rule = rule;
    spec.knot_lo = lo;
    spec.knot_hi = hi;
    spec.estimation = est;
    return spec;
  }
};

// Covariance parameters of the marginal model: K spline variances (>= 0) and
// the lower Cholesky factor of the unstructured error covariance Sigma.
struct CovarianceParams {
  Eigen::VectorXd spline_var;  // length K for an alternative model, length 0 under the null
  Eigen::MatrixXd sigma_chol;  // K x K lower triangular, positive diagonal

  Eigen::MatrixXd sigma() const {
    return sigma_chol * sigma_chol.transpose();
  }
};

// Maximum-likelihood (or REML) estimates for one model fit.
struct FittedModel {
  bool is_alternative = false;
  Estimation estimation = Estimation::ML;

  // d x K fixed effects; rows are intercept, the p adjustment covariates,
  // then (alternative only) the linear s slope gamma_k as the last row.
  Eigen::MatrixXd beta;
  Eigen::VectorXd spline_var;  // K spline variances (alternative only)
  Eigen::MatrixXd sigma;       // K x K error covariance
  double loglik = 0.0;
  Eigen::MatrixXd blups;       // C x K predicted spline coefficients (alternative only)
  bool converged = true;
  int n_params = 0;

  SplineBasis basis;  // knots used by the alternative fit (empty under the null)

  int n_coef() const { return static_cast<int>(beta.rows()); }

  Eigen::VectorXd gamma() const {  // linear s slopes, alternative only
    return beta.row(beta.rows() - 1).transpose();
  }
};

}  // namespace mvs
