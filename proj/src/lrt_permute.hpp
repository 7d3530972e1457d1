#pragma once

#include <cstdint>
#include <span>

#include "dataset.hpp"
#include "lmm_fit.hpp"
#include "model.hpp"

namespace mvs {

enum class PermMethod { Covariate, ResidualVector, Cholesky };

const char* perm_method_name(PermMethod method);

struct PermutationConfig {
  PermMethod method = PermMethod::Covariate;
  int m = 1000;                  // Monte Carlo replicate count
  std::uint64_t seed = 0;        // replicate m draws from Rng::stream(seed, m)
  double tie_tol = 1e-8;         // LR^m >= lr_obs - tie_tol counts as extreme
  bool include_observed = false; // true: p = (1 + #)/(M + 1) instead of #/M
};

struct PermutationResult {
  double lr_obs = 0.0;
  Eigen::VectorXd lr_replicates;  // length M; +inf marks a failed replicate fit
  double p_value = 1.0;
  int n_failed_fits = 0;  // replicates whose fit did not converge after a retry
  PermMethod method = PermMethod::Covariate;
  int m = 0;
  std::uint64_t seed = 0;
};

// Joint likelihood-ratio statistic for H0: gamma_k = spline_var_k = 0 for all
// k. Both fits are ML regardless of the specs' estimation field; lr is
// clamped at zero.
struct LrResult {
  double lr = 0.0;
  FittedModel null_fit;
  FittedModel alt_fit;
};
LrResult lr_statistic(const Dataset& ds, const ModelSpec& null_spec,
                      const ModelSpec& alt_spec);

// The three Monte Carlo permutation schemes. All are deterministic in
// (dataset, specs, config) for any worker count. Replicates whose alternative
// fit fails to converge are retried once from a fresh start and then counted
// as LR = +inf (conservative) in n_failed_fits.
//
// Covariate: permutes s across subjects and refits only the alternative
// model; the observed-data null log-likelihood is reused for every replicate
// (the null model does not involve s). Handles unbalanced data.
PermutationResult permute_covariate_test(const Dataset& ds, const ModelSpec& null_spec,
                                         const ModelSpec& alt_spec,
                                         const PermutationConfig& config,
                                         int n_workers = 1);

// Residual vector: permutes whole null-model residual K-vectors across
// subjects and refits both models per replicate. Requires balanced data.
PermutationResult permute_residual_vector_test(const Dataset& ds,
                                               const ModelSpec& null_spec,
                                               const ModelSpec& alt_spec,
                                               const PermutationConfig& config,
                                               int n_workers = 1);

// Cholesky: whitens null residuals per subject with the (subset) Cholesky
// factor of the estimated Sigma, pools every scalar, permutes them jointly
// regardless of subject, back-transforms, and refits both models. Handles
// unbalanced data.
PermutationResult permute_cholesky_test(const Dataset& ds, const ModelSpec& null_spec,
                                        const ModelSpec& alt_spec,
                                        const PermutationConfig& config,
                                        int n_workers = 1);

// Dispatch on config.method.
PermutationResult run_permutation_test(const Dataset& ds, const ModelSpec& null_spec,
                                       const ModelSpec& alt_spec,
                                       const PermutationConfig& config,
                                       int n_workers = 1);

// Single-outcome test on the K=1 restriction of the dataset (subjects missing
// that outcome are dropped, so the sub-dataset is balanced and the cholesky
// and residual-vector schemes coincide).
PermutationResult univariate_test(const Dataset& ds, int outcome_index,
                                  const ModelSpec& null_spec, const ModelSpec& alt_spec,
                                  const PermutationConfig& config, int n_workers = 1);

// min(1, K * min_k p_k).
double bonferroni(std::span<const double> p_values);

// Exhaustive covariate test enumerating all N! permutations (test utility,
// N <= 8).
PermutationResult exhaustive_covariate_test(const Dataset& ds,
                                            const ModelSpec& null_spec,
                                            const ModelSpec& alt_spec,
                                            double tie_tol = 1e-8);

}  // namespace mvs
