#include "lrt_permute.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace mvs {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ModelSpec as_ml(const ModelSpec& spec) {
  ModelSpec ml = spec;
  ml.estimation = Estimation::ML;
  return ml;
}

void check_nested(const ModelSpec& null_spec, const ModelSpec& alt_spec) {
  if (null_spec.include_s || !alt_spec.include_s)
    fail_invalid("specs must be nested: null without s, alternative with s");
}

// Alternative fit with the one-retry policy: a non-converged fit is rerun
// from a fresh start (half the null error variances, double the iteration
// budget) before the replicate is declared failed.
FittedModel fit_alt_with_retry(const Dataset& ds, const ModelSpec& alt_ml,
                               const FittedModel* null_hint, bool& failed) {
  AltFitHints hints;
  hints.null_fit = null_hint;
  FittedModel fm = fit_alternative(ds, alt_ml, hints);
  if (!fm.converged) {
    AltFitHints retry;
    retry.null_fit = null_hint;
    retry.start_var_frac = 0.5;
    retry.max_iter_mult = 2;
    fm = fit_alternative(ds, alt_ml, retry);
  }
  failed = !fm.converged;
  return fm;
}

double p_value_from(const Eigen::VectorXd& lr, double lr_obs,
                    const PermutationConfig& config) {
  int count = 0;
  for (Eigen::Index i = 0; i < lr.size(); ++i)
    if (lr[i] >= lr_obs - config.tie_tol) ++count;
  const double m = static_cast<double>(lr.size());
  return config.include_observed ? (1.0 + count) / (m + 1.0) : count / m;
}

PermutationResult make_result(const PermutationConfig& config, double lr_obs,
                              Eigen::VectorXd lr, int n_failed) {
  PermutationResult res;
  res.method = config.method;
  res.m = static_cast<int>(lr.size());
  res.seed = config.seed;
  res.lr_obs = lr_obs;
  res.p_value = p_value_from(lr, lr_obs, config);
  res.lr_replicates = std::move(lr);
  res.n_failed_fits = n_failed;
  return res;
}

Dataset with_permuted_s(const Dataset& ds, const std::vector<int>& perm) {
  Dataset out = ds;
  for (int i = 0; i < ds.n(); ++i)
    out.subjects[static_cast<std::size_t>(i)].s =
        ds.subjects[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])].s;
  return out;
}

// Null-model fitted means X_i beta_hat per subject (K-vector each).
Eigen::MatrixXd null_means(const Dataset& ds, const FittedModel& null_fit) {
  return fixed_design(ds, false) * null_fit.beta;
}

}  // namespace

const char* perm_method_name(PermMethod method) {
  switch (method) {
    case PermMethod::Covariate: return "covariate";
    case PermMethod::ResidualVector: return "residual";
    case PermMethod::Cholesky: return "cholesky";
  }
  return "?";
}

LrResult lr_statistic(const Dataset& ds, const ModelSpec& null_spec,
                      const ModelSpec& alt_spec) {
  check_nested(null_spec, alt_spec);
  LrResult out;
  out.null_fit = fit(ds, as_ml(null_spec));
  out.alt_fit = fit(ds, as_ml(alt_spec));
  out.lr = std::max(0.0, 2.0 * (out.alt_fit.loglik - out.null_fit.loglik));
  return out;
}

PermutationResult permute_covariate_test(const Dataset& ds, const ModelSpec& null_spec,
                                         const ModelSpec& alt_spec,
                                         const PermutationConfig& config,
                                         int n_workers) {
  check_nested(null_spec, alt_spec);
  if (config.m < 1) fail_invalid("permutation replicate count must be positive");
  const ModelSpec alt_ml = as_ml(alt_spec);
  const LrResult obs = lr_statistic(ds, null_spec, alt_spec);
  const double null_loglik = obs.null_fit.loglik;

  Eigen::VectorXd lr(config.m);
  std::atomic<int> n_failed{0};
  parallel_for(config.m, n_workers, [&](int m) {
    try {
      Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(m));
      const Dataset ds_m = with_permuted_s(ds, rng.permutation(ds.n()));
      bool failed = false;
      // The permuted covariate never enters the null model, so the observed
      // null log-likelihood is reused; only the alternative is re-estimated.
      const FittedModel alt_m =
          fit_alt_with_retry(ds_m, alt_ml, &obs.null_fit, failed);
      if (failed) {
        lr[m] = kInf;
        n_failed.fetch_add(1);
      } else {
        lr[m] = 2.0 * (alt_m.loglik - null_loglik);
      }
    } catch (const Error&) {
      lr[m] = kInf;
      n_failed.fetch_add(1);
    }
  });
  return make_result(config, obs.lr, std::move(lr), n_failed.load());
}

PermutationResult permute_residual_vector_test(const Dataset& ds,
                                               const ModelSpec& null_spec,
                                               const ModelSpec& alt_spec,
                                               const PermutationConfig& config,
                                               int n_workers) {
  check_nested(null_spec, alt_spec);
  if (config.m < 1) fail_invalid("permutation replicate count must be positive");
  if (!ds.is_balanced())
    fail_invalid("residual-vector permutation requires balanced data");
  const ModelSpec null_ml = as_ml(null_spec);
  const ModelSpec alt_ml = as_ml(alt_spec);
  const LrResult obs = lr_statistic(ds, null_spec, alt_spec);

  const Eigen::MatrixXd means = null_means(ds, obs.null_fit);
  const Eigen::MatrixXd resid = y_matrix(ds) - means;

  Eigen::VectorXd lr(config.m);
  std::atomic<int> n_failed{0};
  parallel_for(config.m, n_workers, [&](int m) {
    try {
      Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(m));
      const std::vector<int> perm = rng.permutation(ds.n());
      Dataset ds_m = ds;
      for (int i = 0; i < ds.n(); ++i)
        ds_m.subjects[static_cast<std::size_t>(i)].y =
            (means.row(i) + resid.row(perm[static_cast<std::size_t>(i)]))
                .transpose();
      const FittedModel null_m = fit(ds_m, null_ml);
      bool failed = !null_m.converged;
      const FittedModel alt_m = fit_alt_with_retry(ds_m, alt_ml, &null_m, failed);
      failed = failed || !alt_m.converged;
      if (failed) {
        lr[m] = kInf;
        n_failed.fetch_add(1);
      } else {
        lr[m] = 2.0 * (alt_m.loglik - null_m.loglik);
      }
    } catch (const Error&) {
      lr[m] = kInf;
      n_failed.fetch_add(1);
    }
  });
  return make_result(config, obs.lr, std::move(lr), n_failed.load());
}

PermutationResult permute_cholesky_test(const Dataset& ds, const ModelSpec& null_spec,
                                        const ModelSpec& alt_spec,
                                        const PermutationConfig& config,
                                        int n_workers) {
  check_nested(null_spec, alt_spec);
  if (config.m < 1) fail_invalid("permutation replicate count must be positive");
  const ModelSpec null_ml = as_ml(null_spec);
  const ModelSpec alt_ml = as_ml(alt_spec);
  const LrResult obs = lr_statistic(ds, null_spec, alt_spec);

  const int n = ds.n();
  const int k = ds.k();
  const Eigen::MatrixXd means = null_means(ds, obs.null_fit);

  // Per-subject whitening by the Cholesky factor of the observed-outcome
  // subset of Sigma_hat; all whitened scalars are pooled into one vector.
  std::vector<std::vector<int>> obs_idx(static_cast<std::size_t>(n));
  std::vector<Eigen::MatrixXd> chol(static_cast<std::size_t>(n));
  std::vector<int> offset(static_cast<std::size_t>(n) + 1, 0);
  for (int i = 0; i < n; ++i) {
    const auto& subj = ds.subjects[static_cast<std::size_t>(i)];
    for (int j = 0; j < k; ++j)
      if (subj.y_obs[static_cast<std::size_t>(j)])
        obs_idx[static_cast<std::size_t>(i)].push_back(j);
    const auto& idx = obs_idx[static_cast<std::size_t>(i)];
    const int ki = static_cast<int>(idx.size());
    Eigen::MatrixXd sub(ki, ki);
    for (int a = 0; a < ki; ++a)
      for (int b = 0; b < ki; ++b)
        sub(a, b) = obs.null_fit.sigma(idx[static_cast<std::size_t>(a)],
                                       idx[static_cast<std::size_t>(b)]);
    Eigen::LLT<Eigen::MatrixXd> llt(sub);
    if (llt.info() != Eigen::Success)
      fail_fit("cannot Cholesky-factor null covariance");
    chol[static_cast<std::size_t>(i)] = llt.matrixL();
    offset[static_cast<std::size_t>(i) + 1] = offset[static_cast<std::size_t>(i)] + ki;
  }
  const int total = offset[static_cast<std::size_t>(n)];
  Eigen::VectorXd pooled(total);
  for (int i = 0; i < n; ++i) {
    const auto& idx = obs_idx[static_cast<std::size_t>(i)];
    const int ki = static_cast<int>(idx.size());
    Eigen::VectorXd e(ki);
    for (int a = 0; a < ki; ++a) {
      const int j = idx[static_cast<std::size_t>(a)];
      e[a] = ds.subjects[static_cast<std::size_t>(i)].y[j] - means(i, j);
    }
    pooled.segment(offset[static_cast<std::size_t>(i)], ki) =
        chol[static_cast<std::size_t>(i)]
            .triangularView<Eigen::Lower>()
            .solve(e);
  }

  Eigen::VectorXd lr(config.m);
  std::atomic<int> n_failed{0};
  parallel_for(config.m, n_workers, [&](int m) {
    try {
      Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(m));
      const std::vector<int> perm = rng.permutation(total);
      Dataset ds_m = ds;
      for (int i = 0; i < n; ++i) {
        const auto& idx = obs_idx[static_cast<std::size_t>(i)];
        const int ki = static_cast<int>(idx.size());
        Eigen::VectorXd r_star(ki);
        for (int a = 0; a < ki; ++a)
          r_star[a] =
              pooled[perm[static_cast<std::size_t>(offset[static_cast<std::size_t>(i)] + a)]];
        const Eigen::VectorXd e_star = chol[static_cast<std::size_t>(i)] * r_star;
        auto& subj = ds_m.subjects[static_cast<std::size_t>(i)];
        for (int a = 0; a < ki; ++a) {
          const int j = idx[static_cast<std::size_t>(a)];
          subj.y[j] = means(i, j) + e_star[a];
        }
      }
      const FittedModel null_m = fit(ds_m, null_ml);
      bool failed = !null_m.converged;
      const FittedModel alt_m = fit_alt_with_retry(ds_m, alt_ml, &null_m, failed);
      failed = failed || !alt_m.converged;
      if (failed) {
        lr[m] = kInf;
        n_failed.fetch_add(1);
      } else {
        lr[m] = 2.0 * (alt_m.loglik - null_m.loglik);
      }
    } catch (const Error&) {
      lr[m] = kInf;
      n_failed.fetch_add(1);
    }
  });
  return make_result(config, obs.lr, std::move(lr), n_failed.load());
}

PermutationResult run_permutation_test(const Dataset& ds, const ModelSpec& null_spec,
                                       const ModelSpec& alt_spec,
                                       const PermutationConfig& config,
                                       int n_workers) {
  switch (config.method) {
    case PermMethod::Covariate:
      return permute_covariate_test(ds, null_spec, alt_spec, config, n_workers);
    case PermMethod::ResidualVector:
      return permute_residual_vector_test(ds, null_spec, alt_spec, config, n_workers);
    case PermMethod::Cholesky:
      return permute_cholesky_test(ds, null_spec, alt_spec, config, n_workers);
  }
  fail_invalid("unknown permutation method");
}

PermutationResult univariate_test(const Dataset& ds, int outcome_index,
                                  const ModelSpec& null_spec, const ModelSpec& alt_spec,
                                  const PermutationConfig& config, int n_workers) {
  const Dataset sub = sub_dataset_for_outcome(ds, outcome_index);
  return run_permutation_test(sub, null_spec, alt_spec, config, n_workers);
}

double bonferroni(std::span<const double> p_values) {
  if (p_values.empty()) fail_invalid("bonferroni requires at least one p-value");
  const double pmin = *std::min_element(p_values.begin(), p_values.end());
  return std::min(1.0, static_cast<double>(p_values.size()) * pmin);
}

PermutationResult exhaustive_covariate_test(const Dataset& ds,
                                            const ModelSpec& null_spec,
                                            const ModelSpec& alt_spec,
                                            double tie_tol) {
  check_nested(null_spec, alt_spec);
  const int n = ds.n();
  if (n > 8) fail_invalid("exhaustive permutation only supported for N <= 8");
  const ModelSpec alt_ml = as_ml(alt_spec);
  const LrResult obs = lr_statistic(ds, null_spec, alt_spec);

  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> lrs;
  do {
    const Dataset ds_m = with_permuted_s(ds, perm);
    bool failed = false;
    const FittedModel alt_m = fit_alt_with_retry(ds_m, alt_ml, &obs.null_fit, failed);
    lrs.push_back(failed ? kInf : 2.0 * (alt_m.loglik - obs.null_fit.loglik));
  } while (std::next_permutation(perm.begin(), perm.end()));

  PermutationConfig config;
  config.method = PermMethod::Covariate;
  config.m = static_cast<int>(lrs.size());
  config.seed = 0;
  config.tie_tol = tie_tol;
  Eigen::VectorXd lr = Eigen::Map<Eigen::VectorXd>(lrs.data(), static_cast<Eigen::Index>(lrs.size()));
  int n_failed = 0;
  for (double v : lrs) n_failed += std::isinf(v) ? 1 : 0;
  return make_result(config, obs.lr, std::move(lr), n_failed);
}

}  // namespace mvs
