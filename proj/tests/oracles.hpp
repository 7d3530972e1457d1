#pragma once

// Test-only reference implementations. Everything here evaluates the model
// the expensive, obvious way (dense NK x NK covariance matrices, simplex
// search) and is kept independent of the library's low-rank likelihood and
// BFGS paths so the two can check each other.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>

#include "dataset.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "spline_basis.hpp"

namespace oracle {

// Stacked dense model over the observed outcome entries (subject-major,
// outcome-within-subject order).
struct DenseModel {
  Eigen::VectorXd y;  // n_obs
  Eigen::MatrixXd x;  // n_obs x dK, outcome-major coefficient blocks
  Eigen::MatrixXd z;  // n_obs x CK (empty when C = 0)
  int d = 0;
  int k = 0;
  int c = 0;
};

DenseModel build_dense(const mvs::Dataset& ds, const mvs::SplineBasis* basis,
                       bool include_s);

// Gaussian log-density with mean X vec(beta) and V = Z G Z' + R, formed
// explicitly. reml adds -log|X' V^-1 X|/2 + (dK/2) log(2pi).
double dense_loglik(const mvs::Dataset& ds, const mvs::SplineBasis* basis,
                    bool include_s, const Eigen::MatrixXd& beta,
                    const Eigen::VectorXd& spline_var, const Eigen::MatrixXd& sigma,
                    bool reml);

struct DenseProfiled {
  double ml = 0.0;
  double reml = 0.0;
  Eigen::MatrixXd beta;
};
// GLS-profiled dense evaluation at fixed covariance parameters.
DenseProfiled dense_profiled(const mvs::Dataset& ds, const mvs::SplineBasis* basis,
                             bool include_s, const Eigen::VectorXd& spline_var,
                             const Eigen::MatrixXd& sigma);

// Dense BLUP a_hat = G Z' V^-1 (y - X beta), reshaped C x K.
Eigen::MatrixXd dense_blup(const mvs::Dataset& ds, const mvs::SplineBasis& basis,
                           const Eigen::MatrixXd& beta,
                           const Eigen::VectorXd& spline_var,
                           const Eigen::MatrixXd& sigma);

// Hand-rolled Nelder-Mead (minimization), independent of the library
// optimizer.
double nelder_mead(const std::function<double(const Eigen::VectorXd&)>& f,
                   Eigen::VectorXd x0, double step, int max_evals,
                   Eigen::VectorXd* argmin = nullptr);

// Derivative-free search for the maximized alternative log-likelihood over
// the K + K(K+1)/2 covariance parameters with GLS-profiled beta, driven by
// the dense evaluator with multi-start Nelder-Mead. Returns the best ML
// log-likelihood found.
double bruteforce_alt_loglik(const mvs::Dataset& ds, const mvs::SplineBasis& basis,
                             std::uint64_t seed, int restarts = 12,
                             int max_evals = 4000);

// Random small dataset for oracle cross-checks: s, x, y all Gaussian with
// mild cross-outcome correlation; missing entries only when balanced=false
// (every subject keeps at least one outcome).
mvs::Dataset random_dataset(mvs::Rng& rng, int n, int k, int p, bool balanced);

// Random SPD matrix with unit-scale diagonal.
Eigen::MatrixXd random_spd(mvs::Rng& rng, int k);

}  // namespace oracle
