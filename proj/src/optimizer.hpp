#pragma once

#include <Eigen/Dense>
#include <functional>

namespace mvs {

using Objective = std::function<double(const Eigen::VectorXd&)>;

struct OptimOptions {
  int max_iter = 500;
  double tol_f = 1e-8;    // relative objective-change stop
  double tol_x = 1e-8;    // max-norm parameter-step stop
  double fd_step = 1e-5;  // central-difference step scale
};

struct OptimResult {
  Eigen::VectorXd x;
  double f = 0.0;
  int iterations = 0;
  long n_evals = 0;
  bool converged = false;
};

// BFGS minimizer with central-difference gradients and Armijo backtracking.
// The objective may return +inf to reject a region; such points are never
// accepted. Tolerances follow OptimOptions; hitting max_iter leaves
// converged = false.
OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0,
                          const OptimOptions& opts = {});

}  // namespace mvs
