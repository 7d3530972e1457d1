#pragma once

#include <atomic>

#include "dataset.hpp"
#include "model.hpp"

namespace mvs {

// Marginal Gaussian log-likelihood of the stacked non-missing outcomes at the
// given fixed effects and covariance parameters. Under an alternative spec the
// covariance is V = Z G Z' + R with G = diag(spline_var_k I_C) shared across
// subjects and R block-diagonal per subject (Sigma subset to that subject's
// observed outcomes); the evaluation exploits the low-rank structure and never
// forms V. REML specs add the usual -log|X' V^-1 X|/2 adjustment and constant.
double loglik(const Dataset& ds, const ModelSpec& spec, const Eigen::MatrixXd& beta,
              const CovarianceParams& cov);

// Maximum-likelihood (or REML) fit of the null or alternative model.
// Balanced null ML/REML fits use the closed form (per-outcome least squares
// plus the residual cross-product covariance); everything else maximizes the
// GLS-profiled likelihood numerically. Hitting max_iter is reported through
// converged = false, never as an error.
FittedModel fit(const Dataset& ds, const ModelSpec& spec);

// Per-dataset starting values for the alternative search come from a null
// fit; callers that already have one (permutation loops) pass it here to
// avoid recomputing. start_var_frac sets the spline-variance start as a
// fraction of the null error variances (the default 10% multi-start
// companion to the tau = 0 boundary candidate).
struct AltFitHints {
  const FittedModel* null_fit = nullptr;
  double start_var_frac = 0.1;
  int max_iter_mult = 1;
};
FittedModel fit_alternative(const Dataset& ds, const ModelSpec& spec,
                            const AltFitHints& hints);

// BLUP of the spline coefficients, a_hat = G Z' V^-1 (y - X beta), reshaped
// C x K. Columns with spline_var = 0 are exactly zero.
Eigen::MatrixXd blup(const Dataset& ds, const ModelSpec& spec,
                     const FittedModel& fitted);

// Fitted curves g_k(s) over s_grid at a reference adjustment-covariate value:
// beta_0k + beta_1k' x_ref + gamma_k s + sum_c a_ck (s - knot_c)_+.
// Returns grid-length x K.
Eigen::MatrixXd fitted_curve(const FittedModel& fitted, const Eigen::VectorXd& s_grid,
                             const Eigen::VectorXd& reference_x);

// GLS-profiled log-likelihood at fixed covariance parameters (beta profiled
// out). Exposed for property tests and diagnostics.
struct ProfiledValue {
  double ml = 0.0;
  double reml = 0.0;
  Eigen::MatrixXd beta;  // d x K GLS solution
};
ProfiledValue profiled_loglik(const Dataset& ds, const ModelSpec& spec,
                              const Eigen::VectorXd& spline_var,
                              const Eigen::MatrixXd& sigma);

// Knot resolution for a spec against the observed s values.
SplineBasis resolve_basis(const ModelSpec& spec, const Eigen::VectorXd& s);

// Fixed-effect design: intercept, the p adjustment covariates, then s when
// include_s. Shared by all outcomes (coefficients are per outcome).
Eigen::MatrixXd fixed_design(const Dataset& ds, bool include_s);

// Counters of public fit() calls, used by tests to assert that permutation
// schemes re-estimate only what they must.
struct FitCounters {
  std::atomic<long> null_fits{0};
  std::atomic<long> alt_fits{0};
  void reset() {
    null_fits = 0;
    alt_fits = 0;
  }
};
FitCounters& fit_counters();

}  // namespace mvs
