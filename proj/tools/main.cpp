// mvspline command-line tool: joint permutation tests for smooth covariate
// effects on multivariate outcomes, fitted-curve export, and the simulation
// harness. Thin driver over the mvspline C API; all numerics live in the
// shared library.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <ctime>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "mvspline.h"

namespace {

using nlohmann::json;

constexpr int kExitData = 2;
constexpr int kExitFit = 3;

int exit_code_for(mvs_status status) {
  switch (status) {
    case MVS_OK: return 0;
    case MVS_ERR_FIT: return kExitFit;
    case MVS_ERR_INVALID:
    case MVS_ERR_IO:
    default: return kExitData;
  }
}

[[noreturn]] void die(mvs_status status, const std::string& context) {
  std::cerr << "mvspline: " << context << ": " << mvs_last_error() << "\n";
  std::exit(exit_code_for(status));
}

struct DatasetHandle {
  mvs_dataset* ds = nullptr;
  ~DatasetHandle() { mvs_dataset_free(ds); }
};

struct FitHandle {
  mvs_fit* fit = nullptr;
  ~FitHandle() { mvs_fit_free(fit); }
};

struct TestHandle {
  mvs_test_result* res = nullptr;
  ~TestHandle() { mvs_test_result_free(res); }
};

mvs_dataset* load_dataset(const std::string& path) {
  mvs_dataset* ds = nullptr;
  const mvs_status st = mvs_dataset_read_csv(path.c_str(), &ds);
  if (st != MVS_OK) die(st, "reading " + path);
  char msg[1024];
  int n_violations = 0;
  mvs_dataset_validate(ds, msg, sizeof(msg), &n_violations);
  if (n_violations > 0) {
    std::cerr << "mvspline: invalid dataset " << path << ": " << msg << "\n";
    mvs_dataset_free(ds);
    std::exit(kExitData);
  }
  return ds;
}

struct KnotRangeFlag {
  bool automatic = true;
  double lo = 0.0;
  double hi = 0.0;
};

KnotRangeFlag parse_knot_range(const std::string& text) {
  KnotRangeFlag out;
  if (text == "auto") return out;
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument(text);
    out.lo = std::stod(text.substr(0, comma));
    out.hi = std::stod(text.substr(comma + 1));
    out.automatic = false;
  } catch (const std::exception&) {
    std::cerr << "mvspline: --knot-range expects 'auto' or 'LO,HI'\n";
    std::exit(kExitData);
  }
  if (!(out.lo < out.hi)) {
    std::cerr << "mvspline: --knot-range bounds must satisfy LO < HI\n";
    std::exit(kExitData);
  }
  return out;
}

std::string timestamp_utc() {
  char buf[32];
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json matrix_json(const std::vector<double>& values, int rows, int cols) {
  json out = json::array();
  for (int i = 0; i < rows; ++i) {
    json row = json::array();
    for (int j = 0; j < cols; ++j) row.push_back(values[static_cast<size_t>(i * cols + j)]);
    out.push_back(row);
  }
  return out;
}

json fit_json(const mvs_dataset* ds, const mvs_fit* fit, bool alternative) {
  const int k = mvs_dataset_k(ds);
  const int d = mvs_fit_n_coef(fit);
  json out;
  out["loglik"] = mvs_fit_loglik(fit);
  out["converged"] = mvs_fit_converged(fit) != 0;
  out["n_params"] = mvs_fit_n_params(fit);
  std::vector<double> beta(static_cast<size_t>(d * k));
  mvs_fit_beta(fit, beta.data(), beta.size());
  out["beta"] = matrix_json(beta, d, k);
  std::vector<double> sigma(static_cast<size_t>(k * k));
  mvs_fit_sigma(fit, sigma.data(), sigma.size());
  out["sigma"] = matrix_json(sigma, k, k);
  if (alternative) {
    std::vector<double> sv(static_cast<size_t>(k));
    mvs_fit_spline_var(fit, sv.data(), sv.size());
    out["spline_var"] = sv;
    json gamma = json::array();
    for (int j = 0; j < k; ++j) gamma.push_back(beta[static_cast<size_t>((d - 1) * k + j)]);
    out["gamma"] = gamma;
    const int c = mvs_fit_n_knots(fit);
    std::vector<double> knots(static_cast<size_t>(c));
    mvs_fit_knots(fit, knots.data(), knots.size());
    out["knots"] = knots;
  }
  return out;
}

void write_output(const json& report, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << report.dump(2) << "\n";
    return;
  }
  std::ofstream out(out_path);
  if (!out) {
    std::cerr << "mvspline: cannot write " << out_path << "\n";
    std::exit(kExitData);
  }
  out << report.dump(2) << "\n";
}

int cmd_test(const std::string& data_path, const std::string& method_name, int m,
             std::uint64_t seed, int knots, const std::string& knot_range,
             bool univariate, double alpha, bool include_observed, int workers,
             const std::string& out_path) {
  DatasetHandle data;
  data.ds = load_dataset(data_path);
  const KnotRangeFlag range = parse_knot_range(knot_range);

  mvs_test_options opts;
  mvs_test_options_init(&opts);
  if (method_name == "covariate") {
    opts.method = MVS_METHOD_COVARIATE;
  } else if (method_name == "residual") {
    opts.method = MVS_METHOD_RESIDUAL;
  } else if (method_name == "cholesky") {
    opts.method = MVS_METHOD_CHOLESKY;
  } else {
    std::cerr << "mvspline: unknown --method '" << method_name
              << "' (expected covariate, residual, cholesky)\n";
    return kExitData;
  }
  opts.m = m;
  opts.seed = seed;
  opts.n_knots = knots;
  opts.knot_range_auto = range.automatic ? 1 : 0;
  opts.knot_lo = range.lo;
  opts.knot_hi = range.hi;
  opts.include_observed = include_observed ? 1 : 0;
  opts.n_workers = workers;

  TestHandle joint;
  {
    const mvs_status st = mvs_run_test(data.ds, &opts, &joint.res);
    if (st != MVS_OK) die(st, "joint test");
  }

  // Observed-data fits for the report.
  mvs_fit_options null_opts;
  mvs_fit_options_init(&null_opts);
  null_opts.include_s = 0;
  FitHandle null_fit;
  if (mvs_status st = mvs_fit_model(data.ds, &null_opts, &null_fit.fit); st != MVS_OK)
    die(st, "null fit");
  mvs_fit_options alt_opts;
  mvs_fit_options_init(&alt_opts);
  alt_opts.n_knots = knots;
  alt_opts.knot_range_auto = range.automatic ? 1 : 0;
  alt_opts.knot_lo = range.lo;
  alt_opts.knot_hi = range.hi;
  FitHandle alt_fit;
  if (mvs_status st = mvs_fit_model(data.ds, &alt_opts, &alt_fit.fit); st != MVS_OK)
    die(st, "alternative fit");

  const int k = mvs_dataset_k(data.ds);
  json report;
  report["mvspline_version"] = mvs_version();
  report["generated_at"] = timestamp_utc();
  report["command"] = "test";
  report["config"] = {
      {"data", data_path},
      {"method", method_name},
      {"m", m},
      {"seed", seed},
      {"knots", knots},
      {"knot_range", range.automatic ? json("auto") : json({range.lo, range.hi})},
      {"alpha", alpha},
      {"univariate", univariate},
      {"include_observed", include_observed},
      {"workers", workers},
  };
  json data_info;
  data_info["n"] = mvs_dataset_n(data.ds);
  data_info["k"] = k;
  data_info["p"] = mvs_dataset_p(data.ds);
  data_info["balanced"] = mvs_dataset_is_balanced(data.ds) != 0;
  {
    json names = json::array();
    for (int j = 0; j < k; ++j) names.push_back(mvs_dataset_outcome_name(data.ds, j));
    data_info["outcomes"] = names;
    json cov_names = json::array();
    for (int j = 0; j < mvs_dataset_p(data.ds); ++j)
      cov_names.push_back(mvs_dataset_covariate_name(data.ds, j));
    data_info["covariates"] = cov_names;
  }
  report["data"] = data_info;
  report["null_fit"] = fit_json(data.ds, null_fit.fit, false);
  report["alt_fit"] = fit_json(data.ds, alt_fit.fit, true);
  report["joint_test"] = {
      {"method", method_name},
      {"m", mvs_test_m(joint.res)},
      {"lr_obs", mvs_test_lr_obs(joint.res)},
      {"p_value", mvs_test_p_value(joint.res)},
      {"n_failed_fits", mvs_test_n_failed_fits(joint.res)},
      {"reject_at_alpha", mvs_test_p_value(joint.res) < alpha},
  };

  if (univariate) {
    json tests = json::array();
    std::vector<double> pvals;
    for (int j = 0; j < k; ++j) {
      TestHandle uni;
      const mvs_status st = mvs_run_univariate_test(data.ds, j, &opts, &uni.res);
      if (st != MVS_OK) die(st, std::string("univariate test for ") +
                                    mvs_dataset_outcome_name(data.ds, j));
      pvals.push_back(mvs_test_p_value(uni.res));
      tests.push_back({
          {"outcome", mvs_dataset_outcome_name(data.ds, j)},
          {"lr_obs", mvs_test_lr_obs(uni.res)},
          {"p_value", mvs_test_p_value(uni.res)},
          {"n_failed_fits", mvs_test_n_failed_fits(uni.res)},
      });
    }
    for (int j = 0; j < k; ++j)
      tests[static_cast<size_t>(j)]["p_bonferroni"] =
          std::min(1.0, k * pvals[static_cast<size_t>(j)]);
    report["univariate_tests"] = tests;
    report["bonferroni_joint_p"] = mvs_bonferroni(pvals.data(), k);
  }

  write_output(report, out_path);
  return 0;
}

int cmd_fit_curve(const std::string& data_path, int knots,
                  const std::string& knot_range, int grid_n,
                  const std::string& reference_x, bool use_ml,
                  const std::string& out_path) {
  DatasetHandle data;
  data.ds = load_dataset(data_path);
  const KnotRangeFlag range = parse_knot_range(knot_range);
  const int k = mvs_dataset_k(data.ds);
  const int p = mvs_dataset_p(data.ds);
  if (grid_n < 1) {
    std::cerr << "mvspline: --grid must be positive\n";
    return kExitData;
  }

  std::vector<double> xref(static_cast<size_t>(p), 0.0);
  if (reference_x == "mean") {
    if (p > 0 &&
        mvs_dataset_covariate_means(data.ds, xref.data(), xref.size()) != MVS_OK)
      die(MVS_ERR_INVALID, "covariate means");
  } else if (reference_x != "zero") {
    std::stringstream ss(reference_x);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) {
      try {
        vals.push_back(std::stod(cell));
      } catch (const std::exception&) {
        std::cerr << "mvspline: --reference-x expects mean, zero, or a comma list\n";
        return kExitData;
      }
    }
    if (static_cast<int>(vals.size()) != p) {
      std::cerr << "mvspline: --reference-x list must have length p = " << p << "\n";
      return kExitData;
    }
    xref = vals;
  }

  mvs_fit_options opts;
  mvs_fit_options_init(&opts);
  opts.n_knots = knots;
  opts.knot_range_auto = range.automatic ? 1 : 0;
  opts.knot_lo = range.lo;
  opts.knot_hi = range.hi;
  opts.reml = use_ml ? 0 : 1;  // REML by default for curve estimation
  FitHandle fit;
  if (mvs_status st = mvs_fit_model(data.ds, &opts, &fit.fit); st != MVS_OK)
    die(st, "model fit");

  double lo = 0.0, hi = 0.0;
  mvs_dataset_s_range(data.ds, &lo, &hi);
  std::vector<double> grid(static_cast<size_t>(grid_n));
  for (int i = 0; i < grid_n; ++i)
    grid[static_cast<size_t>(i)] =
        grid_n == 1 ? lo : lo + (hi - lo) * i / (grid_n - 1);
  std::vector<double> curves(static_cast<size_t>(grid_n * k));
  if (mvs_status st = mvs_fit_curve(fit.fit, grid.data(), grid_n, xref.data(), p,
                                    curves.data(), curves.size());
      st != MVS_OK)
    die(st, "curve evaluation");

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) {
      std::cerr << "mvspline: cannot write " << out_path << "\n";
      return kExitData;
    }
    out = &file;
  }
  *out << "s";
  for (int j = 0; j < k; ++j) *out << ',' << mvs_dataset_outcome_name(data.ds, j);
  *out << '\n';
  char buf[64];
  for (int i = 0; i < grid_n; ++i) {
    std::snprintf(buf, sizeof(buf), "%.10g", grid[static_cast<size_t>(i)]);
    *out << buf;
    for (int j = 0; j < k; ++j) {
      std::snprintf(buf, sizeof(buf), "%.10g",
                    curves[static_cast<size_t>(i * k + j)]);
      *out << ',' << buf;
    }
    *out << '\n';
  }
  return 0;
}

int cmd_simulate(const std::string& plan_path, const std::string& out_path,
                 int workers) {
  char* table = nullptr;
  const mvs_status st = mvs_run_plan_file(
      plan_path.c_str(), out_path.empty() ? nullptr : out_path.c_str(), workers,
      &table);
  if (st != MVS_OK) die(st, "simulation plan " + plan_path);
  std::cout << table;
  mvs_string_free(table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint permutation tests for smooth covariate effects on "
               "multivariate outcomes (penalized-spline mixed models)"};
  app.set_version_flag("--version", std::string(mvs_version()));
  app.require_subcommand(1);

  // test
  std::string data_path, method = "covariate", knot_range = "auto", out_path;
  int m = 1000, knots = 30, workers = 1;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  bool univariate = false, include_observed = false;
  auto* test = app.add_subcommand(
      "test", "Joint (and per-outcome) permutation tests of no s effect");
  test->add_option("--data", data_path, "Input CSV (id, s, x_*, y_*)")->required();
  test->add_option("--method", method, "covariate | residual | cholesky");
  test->add_option("--m", m, "Permutation replicates (default 1000; 10000 "
                             "recommended for final analyses)");
  test->add_option("--seed", seed, "RNG seed");
  test->add_option("--knots", knots, "Spline knot count");
  test->add_option("--knot-range", knot_range, "auto or LO,HI");
  test->add_flag("--univariate", univariate, "Also test each outcome separately");
  test->add_option("--alpha", alpha, "Rejection level echoed in the report");
  test->add_flag("--include-observed", include_observed,
                 "Use the (1 + #)/(M + 1) p-value variant");
  test->add_option("--workers", workers, "Worker threads for replicates");
  test->add_option("--out", out_path, "Write the JSON report here (default stdout)");

  // fit-curve
  std::string curve_data, curve_range = "auto", reference_x = "mean", curve_out;
  int curve_knots = 30, grid_n = 100;
  bool use_reml = true;
  auto* curve = app.add_subcommand("fit-curve",
                                   "Export fitted outcome curves over the s range");
  curve->add_option("--data", curve_data, "Input CSV")->required();
  curve->add_option("--knots", curve_knots, "Spline knot count");
  curve->add_option("--knot-range", curve_range, "auto or LO,HI");
  curve->add_option("--grid", grid_n, "Grid size over the observed s range");
  curve->add_option("--reference-x", reference_x, "mean | zero | comma list");
  curve->add_flag("--reml,!--ml", use_reml,
                  "REML estimation (default); --ml switches to ML");
  curve->add_option("--out", curve_out, "Write the curve CSV here (default stdout)");

  // simulate
  std::string plan_path, sim_out;
  int sim_workers = 1;
  auto* sim = app.add_subcommand("simulate", "Run a simulation plan file");
  sim->add_option("--plan", plan_path, "Plan file (key = value lines)")->required();
  sim->add_option("--out", sim_out, "Write per-cell CSV results here");
  sim->add_option("--workers", sim_workers, "Worker threads across replications");

  CLI11_PARSE(app, argc, argv);

  if (test->parsed())
    return cmd_test(data_path, method, m, seed, knots, knot_range, univariate,
                    alpha, include_observed, workers, out_path);
  if (curve->parsed())
    return cmd_fit_curve(curve_data, curve_knots, curve_range, grid_n, reference_x,
                         !use_reml, curve_out);
  if (sim->parsed()) return cmd_simulate(plan_path, sim_out, sim_workers);
  return 0;
}
