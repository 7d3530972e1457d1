#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lrt_permute.hpp"
#include "simgen.hpp"

namespace mvs {

// One simulation experiment: R replications of (generate dataset, run the
// requested permutation tests with M replicates each) at a single scenario.
struct ExperimentPlan {
  SimScenario scenario;
  std::vector<PermMethod> methods = {PermMethod::Covariate};
  int r = 500;    // simulation replications
  int m = 199;    // permutation replicates per test
  double alpha = 0.05;
  std::uint64_t base_seed = 1;
  int n_knots = 30;  // fitted model: C knots equally spaced on [-2, 2]
};

struct MethodSummary {
  PermMethod method = PermMethod::Covariate;
  double rejection_rate = 0.0;  // share of replications with p < alpha
  double se = 0.0;              // sqrt(p_hat (1 - p_hat) / R)
  double mean_lr_obs = 0.0;
  long n_failed_fits = 0;  // non-converged replicate fits, summed over tests
  int n_errors = 0;        // replications whose test raised an error
};

struct ExperimentResult {
  SimScenario scenario;
  int r = 0;
  int m = 0;
  double alpha = 0.05;
  std::uint64_t base_seed = 0;
  int n_knots = 30;
  std::vector<MethodSummary> methods;
  double wall_seconds = 0.0;
};

// Deterministic for a fixed plan and any worker count: replicate outcomes are
// stored by index and the dataset/test seeds are derived from (base_seed, r).
ExperimentResult run_experiment(const ExperimentPlan& plan, int n_workers = 1);

// Text table mirroring the simulation-study layout: one block per error
// distribution, rows (N,K) x method, columns gamma-pattern x rho.
std::string table_report(const std::vector<ExperimentResult>& results);

// One CSV row per (scenario, method).
std::string csv_report(const std::vector<ExperimentResult>& results);

// Flat key=value plan files; `rho` and `pattern` accept comma lists and
// expand to one plan per combination. Valid keys: n, k, rho, pattern,
// error_dist, methods, r, m, alpha, seed, knots. '#' starts a comment.
std::vector<ExperimentPlan> parse_plan_text(const std::string& text,
                                            const std::string& origin);
std::vector<ExperimentPlan> parse_plan_file(const std::string& path);

}  // namespace mvs
