/*
 * mvspline — joint tests for smooth covariate effects on multivariate
 * outcomes, via penalized piecewise-linear splines in a linear mixed model
 * and Monte Carlo permutation p-values.
 *
 * C interface of the shared library. All objects are opaque handles created
 * and destroyed here; every fallible call returns an mvs_status and leaves a
 * human-readable message in mvs_last_error() (thread-local) on failure.
 * Matrices are copied out in row-major order into caller-owned buffers.
 */
#ifndef MVSPLINE_H
#define MVSPLINE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum {
  MVS_OK = 0,
  MVS_ERR_INVALID = 1, /* bad arguments or malformed/invalid data */
  MVS_ERR_FIT = 2,     /* estimation failed */
  MVS_ERR_IO = 3       /* file problems */
} mvs_status;

typedef enum {
  MVS_METHOD_COVARIATE = 0,
  MVS_METHOD_RESIDUAL = 1,
  MVS_METHOD_CHOLESKY = 2
} mvs_method;

const char* mvs_version(void);
const char* mvs_last_error(void);

/* ------------------------------------------------------------------ */
/* datasets                                                            */

typedef struct mvs_dataset mvs_dataset;

/* Wide CSV, one row per subject: id, s, x_* (non-empty), y_* (empty cell =
 * missing outcome). */
mvs_status mvs_dataset_read_csv(const char* path, mvs_dataset** out);
mvs_status mvs_dataset_write_csv(const mvs_dataset* ds, const char* path);

/* Build a dataset from arrays: x is n*p row-major, y is n*k row-major,
 * y_observed is n*k (nonzero = observed) or NULL for complete data. ids may
 * be NULL (labels are generated). */
mvs_status mvs_dataset_create(int n, int k, int p, const char* const* ids,
                              const double* s, const double* x, const double* y,
                              const int* y_observed, mvs_dataset** out);
void mvs_dataset_free(mvs_dataset* ds);

int mvs_dataset_n(const mvs_dataset* ds);
int mvs_dataset_k(const mvs_dataset* ds);
int mvs_dataset_p(const mvs_dataset* ds);
int mvs_dataset_is_balanced(const mvs_dataset* ds);
const char* mvs_dataset_outcome_name(const mvs_dataset* ds, int k);
const char* mvs_dataset_covariate_name(const mvs_dataset* ds, int j);

/* Writes up to cap violation messages into msg (each a NUL-terminated string
 * of at most msg_len chars); returns the total violation count via n_out. */
mvs_status mvs_dataset_validate(const mvs_dataset* ds, char* msg, size_t msg_len,
                                int* n_out);

/* Column means of the adjustment covariates (length p). */
mvs_status mvs_dataset_covariate_means(const mvs_dataset* ds, double* out, size_t cap);
/* Observed range of the s covariate. */
mvs_status mvs_dataset_s_range(const mvs_dataset* ds, double* lo, double* hi);

/* ------------------------------------------------------------------ */
/* model fits                                                          */

typedef struct mvs_fit mvs_fit;

typedef struct {
  int include_s;      /* 0: null model, 1: alternative */
  int n_knots;        /* ignored under the null */
  int knot_range_auto; /* 1: observed s range; 0: [knot_lo, knot_hi] */
  double knot_lo;
  double knot_hi;
  int reml;           /* 0: ML, 1: REML */
  double convergence_tol;
  int max_iter;
} mvs_fit_options;

void mvs_fit_options_init(mvs_fit_options* opts); /* defaults: alt, C=30, auto, ML */

mvs_status mvs_fit_model(const mvs_dataset* ds, const mvs_fit_options* opts,
                         mvs_fit** out);
void mvs_fit_free(mvs_fit* fit);

double mvs_fit_loglik(const mvs_fit* fit);
int mvs_fit_converged(const mvs_fit* fit);
int mvs_fit_n_params(const mvs_fit* fit);
int mvs_fit_n_coef(const mvs_fit* fit);  /* rows of beta: 1 + p (+1 with s) */
int mvs_fit_n_knots(const mvs_fit* fit);

/* Buffers are row-major with the stated shapes. */
mvs_status mvs_fit_beta(const mvs_fit* fit, double* out, size_t cap);   /* d x K */
mvs_status mvs_fit_sigma(const mvs_fit* fit, double* out, size_t cap);  /* K x K */
mvs_status mvs_fit_spline_var(const mvs_fit* fit, double* out, size_t cap); /* K */
mvs_status mvs_fit_blups(const mvs_fit* fit, double* out, size_t cap);  /* C x K */
mvs_status mvs_fit_knots(const mvs_fit* fit, double* out, size_t cap);  /* C */

/* Fitted curves over an s grid at a fixed reference x (length p);
 * out is grid_n x K row-major. */
mvs_status mvs_fit_curve(const mvs_fit* fit, const double* s_grid, int grid_n,
                         const double* reference_x, int p, double* out, size_t cap);

/* ------------------------------------------------------------------ */
/* permutation tests                                                   */

typedef struct mvs_test_result mvs_test_result;

typedef struct {
  mvs_method method;
  int m;                 /* permutation replicates */
  uint64_t seed;
  int n_knots;
  int knot_range_auto;
  double knot_lo;
  double knot_hi;
  double tie_tol;
  int include_observed;  /* 1: p = (1+#)/(M+1) */
  int n_workers;
  double convergence_tol;
  int max_iter;
} mvs_test_options;

void mvs_test_options_init(mvs_test_options* opts); /* covariate, M=1000, C=30 */

/* Joint test of no s effect (linear or nonlinear) on any outcome. */
mvs_status mvs_run_test(const mvs_dataset* ds, const mvs_test_options* opts,
                        mvs_test_result** out);
/* Same test on the single-outcome restriction (0-based outcome index). */
mvs_status mvs_run_univariate_test(const mvs_dataset* ds, int outcome_index,
                                   const mvs_test_options* opts,
                                   mvs_test_result** out);
void mvs_test_result_free(mvs_test_result* res);

double mvs_test_lr_obs(const mvs_test_result* res);
double mvs_test_p_value(const mvs_test_result* res);
int mvs_test_n_failed_fits(const mvs_test_result* res);
int mvs_test_m(const mvs_test_result* res);
mvs_status mvs_test_replicates(const mvs_test_result* res, double* out, size_t cap);

/* min(1, k * min(p)) */
double mvs_bonferroni(const double* p_values, int k);

/* ------------------------------------------------------------------ */
/* simulation harness                                                  */

/* Runs every plan in a key=value plan file (keys: n, k, rho, pattern,
 * error_dist, methods, r, m, alpha, seed, knots; rho/pattern accept comma
 * lists). Returns the rendered text table via table_out (free with
 * mvs_string_free) and, when csv_path is non-NULL, writes one CSV row per
 * (scenario, method). */
mvs_status mvs_run_plan_file(const char* plan_path, const char* csv_path,
                             int n_workers, char** table_out);
void mvs_string_free(char* s);

/* Generates a simulated dataset (see plan-file keys for the scenario
 * vocabulary): pattern in {null,sparse,non-uniform,uniform}, error_dist in
 * {normal,sln}. */
mvs_status mvs_generate_dataset(int n, int k, double rho, const char* pattern,
                                const char* error_dist, uint64_t seed,
                                mvs_dataset** out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* MVSPLINE_H */
