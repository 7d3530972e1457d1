#include "mvspline.h"

#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "csv_io.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "lmm_fit.hpp"
#include "lrt_permute.hpp"
#include "sim_harness.hpp"
#include "version.hpp"

struct mvs_dataset {
  mvs::Dataset ds;
};

struct mvs_fit {
  mvs::FittedModel fm;
  int p = 0;
};

struct mvs_test_result {
  mvs::PermutationResult res;
};

namespace {

thread_local std::string g_last_error;

mvs_status status_of(const mvs::Error& err) {
  switch (err.kind()) {
    case mvs::ErrorKind::InvalidArgument: return MVS_ERR_INVALID;
    case mvs::ErrorKind::Fit: return MVS_ERR_FIT;
    case mvs::ErrorKind::Io: return MVS_ERR_IO;
  }
  return MVS_ERR_INVALID;
}

template <typename Fn>
mvs_status guarded(Fn&& fn) {
  try {
    fn();
    return MVS_OK;
  } catch (const mvs::Error& err) {
    g_last_error = err.what();
    return status_of(err);
  } catch (const std::exception& ex) {
    g_last_error = ex.what();
    return MVS_ERR_INVALID;
  }
}

mvs_status set_error(mvs_status code, const char* msg) {
  g_last_error = msg;
  return code;
}

mvs_status copy_matrix(const Eigen::MatrixXd& m, double* out, size_t cap) {
  if (out == nullptr || cap < static_cast<size_t>(m.size()))
    return set_error(MVS_ERR_INVALID, "output buffer too small");
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      out[static_cast<size_t>(i) * static_cast<size_t>(m.cols()) +
          static_cast<size_t>(j)] = m(i, j);
  return MVS_OK;
}

mvs::ModelSpec spec_from(int include_s, int n_knots, int range_auto, double lo,
                         double hi, int reml, double tol, int max_iter) {
  mvs::ModelSpec spec;
  spec.include_s = include_s != 0;
  spec.n_knots = n_knots;
  spec.knot_rule = range_auto != 0 ? mvs::KnotRule::ObservedRange : mvs::KnotRule::Range;
  spec.knot_lo = lo;
  spec.knot_hi = hi;
  spec.estimation = reml != 0 ? mvs::Estimation::REML : mvs::Estimation::ML;
  if (tol > 0) spec.convergence_tol = tol;
  if (max_iter > 0) spec.max_iter = max_iter;
  return spec;
}

}  // namespace

extern "C" {

const char* mvs_version(void) { return mvs::kVersion; }

const char* mvs_last_error(void) { return g_last_error.c_str(); }

mvs_status mvs_dataset_read_csv(const char* path, mvs_dataset** out) {
  if (path == nullptr || out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() { *out = new mvs_dataset{mvs::read_csv(path)}; });
}

mvs_status mvs_dataset_write_csv(const mvs_dataset* ds, const char* path) {
  if (ds == nullptr || path == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() { mvs::write_csv(ds->ds, path); });
}

mvs_status mvs_dataset_create(int n, int k, int p, const char* const* ids,
                              const double* s, const double* x, const double* y,
                              const int* y_observed, mvs_dataset** out) {
  if (out == nullptr || s == nullptr || y == nullptr || (p > 0 && x == nullptr))
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() {
    mvs::Dataset ds;
    ds.n_outcomes = k;
    for (int i = 0; i < n; ++i) {
      mvs::Subject subj;
      subj.id = ids != nullptr ? ids[i] : "S" + std::to_string(i + 1);
      subj.s = s[i];
      subj.x.resize(p);
      for (int j = 0; j < p; ++j) subj.x[j] = x[static_cast<size_t>(i) * p + j];
      subj.y.resize(k);
      subj.y_obs.assign(static_cast<std::size_t>(k), 1);
      for (int j = 0; j < k; ++j) {
        subj.y[j] = y[static_cast<size_t>(i) * k + j];
        if (y_observed != nullptr && y_observed[static_cast<size_t>(i) * k + j] == 0) {
          subj.y_obs[static_cast<std::size_t>(j)] = 0;
          subj.y[j] = 0.0;
        }
      }
      ds.subjects.push_back(std::move(subj));
    }
    ds.ensure_names();
    mvs::require_valid(ds);
    *out = new mvs_dataset{std::move(ds)};
  });
}

void mvs_dataset_free(mvs_dataset* ds) { delete ds; }

int mvs_dataset_n(const mvs_dataset* ds) { return ds->ds.n(); }
int mvs_dataset_k(const mvs_dataset* ds) { return ds->ds.k(); }
int mvs_dataset_p(const mvs_dataset* ds) { return ds->ds.p(); }
int mvs_dataset_is_balanced(const mvs_dataset* ds) {
  return ds->ds.is_balanced() ? 1 : 0;
}

const char* mvs_dataset_outcome_name(const mvs_dataset* ds, int k) {
  if (k < 0 || k >= static_cast<int>(ds->ds.outcome_names.size())) return "";
  return ds->ds.outcome_names[static_cast<std::size_t>(k)].c_str();
}

const char* mvs_dataset_covariate_name(const mvs_dataset* ds, int j) {
  if (j < 0 || j >= static_cast<int>(ds->ds.covariate_names.size())) return "";
  return ds->ds.covariate_names[static_cast<std::size_t>(j)].c_str();
}

mvs_status mvs_dataset_validate(const mvs_dataset* ds, char* msg, size_t msg_len,
                                int* n_out) {
  if (ds == nullptr || n_out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  const auto violations = mvs::validate(ds->ds);
  *n_out = static_cast<int>(violations.size());
  if (msg != nullptr && msg_len > 0) {
    std::string joined;
    for (const auto& v : violations) {
      if (!joined.empty()) joined += "; ";
      joined += (v.subject.empty() ? "dataset" : v.subject) + " [" + v.field +
                "]: " + v.message;
    }
    std::strncpy(msg, joined.c_str(), msg_len - 1);
    msg[msg_len - 1] = '\0';
  }
  return MVS_OK;
}

mvs_status mvs_dataset_covariate_means(const mvs_dataset* ds, double* out,
                                       size_t cap) {
  if (ds == nullptr || out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  const int p = ds->ds.p();
  if (cap < static_cast<size_t>(p))
    return set_error(MVS_ERR_INVALID, "output buffer too small");
  if (p > 0) {
    const Eigen::VectorXd means = mvs::x_matrix(ds->ds).colwise().mean();
    for (int j = 0; j < p; ++j) out[j] = means[j];
  }
  return MVS_OK;
}

mvs_status mvs_dataset_s_range(const mvs_dataset* ds, double* lo, double* hi) {
  if (ds == nullptr || lo == nullptr || hi == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  if (ds->ds.n() == 0) return set_error(MVS_ERR_INVALID, "empty dataset");
  const Eigen::VectorXd s = mvs::s_values(ds->ds);
  *lo = s.minCoeff();
  *hi = s.maxCoeff();
  return MVS_OK;
}

void mvs_fit_options_init(mvs_fit_options* opts) {
  opts->include_s = 1;
  opts->n_knots = 30;
  opts->knot_range_auto = 1;
  opts->knot_lo = 0.0;
  opts->knot_hi = 0.0;
  opts->reml = 0;
  opts->convergence_tol = 1e-8;
  opts->max_iter = 500;
}

mvs_status mvs_fit_model(const mvs_dataset* ds, const mvs_fit_options* opts,
                         mvs_fit** out) {
  if (ds == nullptr || opts == nullptr || out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() {
    const mvs::ModelSpec spec =
        spec_from(opts->include_s, opts->n_knots, opts->knot_range_auto,
                  opts->knot_lo, opts->knot_hi, opts->reml, opts->convergence_tol,
                  opts->max_iter);
    auto fit = std::make_unique<mvs_fit>();
    fit->fm = mvs::fit(ds->ds, spec);
    fit->p = ds->ds.p();
    *out = fit.release();
  });
}

void mvs_fit_free(mvs_fit* fit) { delete fit; }

double mvs_fit_loglik(const mvs_fit* fit) { return fit->fm.loglik; }
int mvs_fit_converged(const mvs_fit* fit) { return fit->fm.converged ? 1 : 0; }
int mvs_fit_n_params(const mvs_fit* fit) { return fit->fm.n_params; }
int mvs_fit_n_coef(const mvs_fit* fit) {
  return static_cast<int>(fit->fm.beta.rows());
}
int mvs_fit_n_knots(const mvs_fit* fit) { return fit->fm.basis.size(); }

mvs_status mvs_fit_beta(const mvs_fit* fit, double* out, size_t cap) {
  return copy_matrix(fit->fm.beta, out, cap);
}
mvs_status mvs_fit_sigma(const mvs_fit* fit, double* out, size_t cap) {
  return copy_matrix(fit->fm.sigma, out, cap);
}
mvs_status mvs_fit_spline_var(const mvs_fit* fit, double* out, size_t cap) {
  return copy_matrix(fit->fm.spline_var, out, cap);
}
mvs_status mvs_fit_blups(const mvs_fit* fit, double* out, size_t cap) {
  return copy_matrix(fit->fm.blups, out, cap);
}
mvs_status mvs_fit_knots(const mvs_fit* fit, double* out, size_t cap) {
  if (out == nullptr || cap < fit->fm.basis.knots.size())
    return set_error(MVS_ERR_INVALID, "output buffer too small");
  for (std::size_t i = 0; i < fit->fm.basis.knots.size(); ++i)
    out[i] = fit->fm.basis.knots[i];
  return MVS_OK;
}

mvs_status mvs_fit_curve(const mvs_fit* fit, const double* s_grid, int grid_n,
                         const double* reference_x, int p, double* out, size_t cap) {
  if (fit == nullptr || s_grid == nullptr || out == nullptr ||
      (p > 0 && reference_x == nullptr))
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() {
    Eigen::VectorXd grid(grid_n);
    for (int i = 0; i < grid_n; ++i) grid[i] = s_grid[i];
    Eigen::VectorXd xref(p);
    for (int j = 0; j < p; ++j) xref[j] = reference_x[j];
    const Eigen::MatrixXd curves = mvs::fitted_curve(fit->fm, grid, xref);
    const mvs_status st = copy_matrix(curves, out, cap);
    if (st != MVS_OK) mvs::fail_invalid("output buffer too small");
  });
}

void mvs_test_options_init(mvs_test_options* opts) {
  opts->method = MVS_METHOD_COVARIATE;
  opts->m = 1000;
  opts->seed = 1;
  opts->n_knots = 30;
  opts->knot_range_auto = 1;
  opts->knot_lo = 0.0;
  opts->knot_hi = 0.0;
  opts->tie_tol = 1e-8;
  opts->include_observed = 0;
  opts->n_workers = 1;
  opts->convergence_tol = 1e-8;
  opts->max_iter = 500;
}

namespace {

mvs_status run_test_impl(const mvs_dataset* ds, int outcome_index,
                         const mvs_test_options* opts, mvs_test_result** out) {
  if (ds == nullptr || opts == nullptr || out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() {
    const mvs::ModelSpec null_spec =
        spec_from(0, opts->n_knots, opts->knot_range_auto, opts->knot_lo,
                  opts->knot_hi, 0, opts->convergence_tol, opts->max_iter);
    const mvs::ModelSpec alt_spec =
        spec_from(1, opts->n_knots, opts->knot_range_auto, opts->knot_lo,
                  opts->knot_hi, 0, opts->convergence_tol, opts->max_iter);
    mvs::PermutationConfig config;
    config.method = static_cast<mvs::PermMethod>(opts->method);
    config.m = opts->m;
    config.seed = opts->seed;
    config.tie_tol = opts->tie_tol;
    config.include_observed = opts->include_observed != 0;
    auto res = std::make_unique<mvs_test_result>();
    if (outcome_index < 0) {
      res->res = mvs::run_permutation_test(ds->ds, null_spec, alt_spec, config,
                                           opts->n_workers);
    } else {
      res->res = mvs::univariate_test(ds->ds, outcome_index, null_spec, alt_spec,
                                      config, opts->n_workers);
    }
    *out = res.release();
  });
}

}  // namespace

mvs_status mvs_run_test(const mvs_dataset* ds, const mvs_test_options* opts,
                        mvs_test_result** out) {
  return run_test_impl(ds, -1, opts, out);
}

mvs_status mvs_run_univariate_test(const mvs_dataset* ds, int outcome_index,
                                   const mvs_test_options* opts,
                                   mvs_test_result** out) {
  if (outcome_index < 0) return set_error(MVS_ERR_INVALID, "outcome index < 0");
  return run_test_impl(ds, outcome_index, opts, out);
}

void mvs_test_result_free(mvs_test_result* res) { delete res; }

double mvs_test_lr_obs(const mvs_test_result* res) { return res->res.lr_obs; }
double mvs_test_p_value(const mvs_test_result* res) { return res->res.p_value; }
int mvs_test_n_failed_fits(const mvs_test_result* res) {
  return res->res.n_failed_fits;
}
int mvs_test_m(const mvs_test_result* res) { return res->res.m; }

mvs_status mvs_test_replicates(const mvs_test_result* res, double* out, size_t cap) {
  return copy_matrix(res->res.lr_replicates, out, cap);
}

double mvs_bonferroni(const double* p_values, int k) {
  return mvs::bonferroni(std::span<const double>(p_values, static_cast<size_t>(k)));
}

mvs_status mvs_run_plan_file(const char* plan_path, const char* csv_path,
                             int n_workers, char** table_out) {
  if (plan_path == nullptr || table_out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() {
    const auto plans = mvs::parse_plan_file(plan_path);
    std::vector<mvs::ExperimentResult> results;
    results.reserve(plans.size());
    for (const auto& plan : plans)
      results.push_back(mvs::run_experiment(plan, n_workers));
    if (csv_path != nullptr) {
      std::ofstream out(csv_path);
      if (!out) mvs::fail_io(std::string("cannot open '") + csv_path + "' for writing");
      out << mvs::csv_report(results);
    }
    const std::string table = mvs::table_report(results);
    char* buf = new char[table.size() + 1];
    std::memcpy(buf, table.c_str(), table.size() + 1);
    *table_out = buf;
  });
}

void mvs_string_free(char* s) { delete[] s; }

mvs_status mvs_generate_dataset(int n, int k, double rho, const char* pattern,
                                const char* error_dist, uint64_t seed,
                                mvs_dataset** out) {
  if (pattern == nullptr || error_dist == nullptr || out == nullptr)
    return set_error(MVS_ERR_INVALID, "null argument");
  return guarded([&]() {
    mvs::SimScenario scenario;
    scenario.n = n;
    scenario.k = k;
    scenario.rho = rho;
    scenario.gamma_pattern = mvs::parse_gamma_pattern(pattern);
    scenario.error_dist = mvs::parse_error_dist(error_dist);
    *out = new mvs_dataset{mvs::generate(scenario, seed)};
  });
}

}  // extern "C"
