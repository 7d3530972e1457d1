// Acceptance suite: statistical and numerical gates for the library, one
// PASS/FAIL line per criterion. The heavy Monte Carlo criteria (A1-A3) mirror
// the simulation-study settings at desk scale and dominate the runtime; the
// rest finish in seconds to minutes.
//
// Usage: acceptance [--only A1,A5,...] [--workers N]
// MVSPLINE_ACCEPT_WORKERS overrides the default worker count.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lmm_fit.hpp"
#include "lrt_permute.hpp"
#include "oracles.hpp"
#include "rng.hpp"
#include "sim_harness.hpp"
#include "simgen.hpp"

using Eigen::MatrixXd;
using Eigen::VectorXd;
using namespace mvs;

namespace {

int g_workers = 2;
int g_failures = 0;
std::set<std::string> g_only;

bool selected(const std::string& name) {
  return g_only.empty() || g_only.count(name) > 0;
}

void report(const std::string& name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("%-3s %-4s %s [%.1fs]\n", name.c_str(), pass ? "PASS" : "FAIL",
              detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

template <typename Fn>
void criterion(const std::string& name, Fn&& fn) {
  if (!selected(name)) return;
  const auto t0 = std::chrono::steady_clock::now();
  std::string detail;
  bool pass = false;
  try {
    pass = fn(detail);
  } catch (const std::exception& ex) {
    detail = std::string("exception: ") + ex.what();
  }
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report(name, pass, detail, secs);
}

ExperimentPlan base_plan(GammaPattern pattern, double rho, ErrorDist dist, int r,
                         std::uint64_t seed) {
  ExperimentPlan plan;
  plan.scenario.n = 100;
  plan.scenario.k = 5;
  plan.scenario.rho = rho;
  plan.scenario.gamma_pattern = pattern;
  plan.scenario.error_dist = dist;
  plan.r = r;
  plan.m = 199;
  plan.alpha = 0.05;
  plan.base_seed = seed;
  plan.n_knots = 30;
  return plan;
}

std::string rate_string(const ExperimentResult& res) {
  std::ostringstream out;
  for (const auto& ms : res.methods) {
    out << perm_method_name(ms.method) << "=" << ms.rejection_rate;
    out << (ms.n_errors > 0 ? "(errors!)" : "") << " ";
  }
  return out.str();
}

// A1: Type I error with normal errors at (N=100, K=5), rho = 0.25.
bool a1(std::string& detail) {
  ExperimentPlan plan = base_plan(GammaPattern::Null, 0.25, ErrorDist::Normal,
                                  500, 20250808);
  plan.methods = {PermMethod::Covariate, PermMethod::ResidualVector,
                  PermMethod::Cholesky};
  const ExperimentResult res = run_experiment(plan, g_workers);
  bool pass = true;
  for (const auto& ms : res.methods)
    pass = pass && ms.n_errors == 0 && ms.rejection_rate >= 0.025 &&
           ms.rejection_rate <= 0.075;
  detail = "type-I error, normal errors: " + rate_string(res) +
           "bounds [0.025,0.075], R=500 M=199";
  return pass;
}

// A2: Type I error with standardized-lognormal errors.
bool a2(std::string& detail) {
  ExperimentPlan plan =
      base_plan(GammaPattern::Null, 0.25, ErrorDist::Sln, 500, 20250809);
  plan.methods = {PermMethod::Covariate, PermMethod::ResidualVector,
                  PermMethod::Cholesky};
  const ExperimentResult res = run_experiment(plan, g_workers);
  bool pass = true;
  for (const auto& ms : res.methods) {
    const bool chol = ms.method == PermMethod::Cholesky;
    const double lo = chol ? 0.03 : 0.025;
    const double hi = chol ? 0.11 : 0.075;
    pass = pass && ms.n_errors == 0 && ms.rejection_rate >= lo &&
           ms.rejection_rate <= hi;
  }
  detail = "type-I error, SLN errors: " + rate_string(res) +
           "bounds [0.025,0.075] ([0.03,0.11] cholesky)";
  return pass;
}

// A3: power levels and orderings across gamma patterns and correlations.
bool a3(std::string& detail) {
  const auto power = [&](GammaPattern pattern, double rho, std::uint64_t seed) {
    ExperimentPlan plan =
        base_plan(pattern, rho, ErrorDist::Normal, 300, seed);
    plan.methods = {PermMethod::Covariate};
    return run_experiment(plan, g_workers).methods[0].rejection_rate;
  };
  const double uniform_lo = power(GammaPattern::Uniform, 0.25, 31);
  const double uniform_hi = power(GammaPattern::Uniform, 0.75, 31);
  const double sparse_lo = power(GammaPattern::Sparse, 0.25, 37);
  const double sparse_hi = power(GammaPattern::Sparse, 0.75, 37);
  std::ostringstream out;
  out << "power (covariate): uniform r=.25 " << uniform_lo << " in [0.29,0.48]; "
      << "sparse r=.25 " << sparse_lo << " in [0.05,0.16]; sparse r=.75 "
      << sparse_hi << " > sparse r=.25; uniform r=.75 " << uniform_hi
      << " < uniform r=.25";
  detail = out.str();
  return uniform_lo >= 0.29 && uniform_lo <= 0.48 && sparse_lo >= 0.05 &&
         sparse_lo <= 0.16 && sparse_hi > sparse_lo && uniform_hi < uniform_lo;
}

// A4: low-rank likelihood equals the dense evaluation on 50 tiny instances.
bool a4(std::string& detail) {
  mvs::Rng rng(404);
  double worst = 0.0;
  for (int it = 0; it < 50; ++it) {
    const int n = 4 + static_cast<int>(rng.bounded(3));
    const int k = 1 + static_cast<int>(rng.bounded(2));
    const int p = static_cast<int>(rng.bounded(2));
    const int c = 1 + static_cast<int>(rng.bounded(3));
    const Dataset ds = oracle::random_dataset(rng, n, k, p, it % 2 == 0);
    const ModelSpec spec = ModelSpec::alternative(c, KnotRule::ObservedRange);
    const SplineBasis basis = resolve_basis(spec, s_values(ds));
    MatrixXd beta(2 + p, k);
    for (int i = 0; i < beta.rows(); ++i)
      for (int j = 0; j < k; ++j) beta(i, j) = rng.normal();
    VectorXd sv(k);
    for (int j = 0; j < k; ++j) sv[j] = rng.uniform();
    const MatrixXd sigma = oracle::random_spd(rng, k);
    CovarianceParams cov;
    cov.spline_var = sv;
    cov.sigma_chol = sigma.llt().matrixL();
    const double got = loglik(ds, spec, beta, cov);
    const double want =
        oracle::dense_loglik(ds, &basis, true, beta, sv, cov.sigma(), false);
    worst = std::max(worst, std::fabs(got - want) / std::max(1.0, std::fabs(want)));
  }
  std::ostringstream out;
  out << "dense-oracle equivalence over 50 instances: worst relative diff "
      << worst << " (tol 1e-10)";
  detail = out.str();
  return worst <= 1e-10;
}

// A5: fit() is not beaten by an independent derivative-free search.
bool a5(std::string& detail) {
  mvs::Rng rng(505);
  double worst_gap = -1e300;
  for (int it = 0; it < 10; ++it) {
    const Dataset ds = oracle::random_dataset(rng, 6, 2, 0, true);
    const ModelSpec spec = ModelSpec::alternative(2, KnotRule::ObservedRange);
    const FittedModel fm = fit(ds, spec);
    const SplineBasis basis = resolve_basis(spec, s_values(ds));
    const double brute = oracle::bruteforce_alt_loglik(
        ds, basis, 9000 + static_cast<std::uint64_t>(it));
    worst_gap = std::max(worst_gap, brute - fm.loglik);
  }
  std::ostringstream out;
  out << "brute-force fit equivalence over 10 instances: worst (search - fit) gap "
      << worst_gap << " (tol 1e-3)";
  detail = out.str();
  return worst_gap <= 1e-3;
}

// A6: exhaustive covariate test equals the definition computed independently.
bool a6(std::string& detail) {
  mvs::SimScenario sc;
  sc.n = 5;
  sc.k = 1;
  sc.rho = 0.25;
  const Dataset ds = generate(sc, 606);
  const ModelSpec null_spec = ModelSpec::null_model();
  const ModelSpec alt_spec = ModelSpec::alternative(2, KnotRule::ObservedRange);
  const PermutationResult ex = exhaustive_covariate_test(ds, null_spec, alt_spec);

  // Independent route, driving lr_statistic directly over all 120 orderings.
  const double lr_obs = lr_statistic(ds, null_spec, alt_spec).lr;
  std::vector<int> idx = {0, 1, 2, 3, 4};
  int count = 0, total = 0;
  do {
    Dataset perm_ds = ds;
    for (int i = 0; i < 5; ++i)
      perm_ds.subjects[static_cast<std::size_t>(i)].s =
          ds.subjects[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])].s;
    if (lr_statistic(perm_ds, null_spec, alt_spec).lr >= lr_obs - 1e-8) ++count;
    ++total;
  } while (std::next_permutation(idx.begin(), idx.end()));
  const double p_def = static_cast<double>(count) / total;

  std::ostringstream out;
  out << "exhaustive permutation (120 orderings): p=" << ex.p_value
      << " vs definition " << p_def;
  detail = out.str();
  return total == 120 && ex.m == 120 && ex.p_value == p_def;
}

// A7: pooled Cholesky residuals are white.
bool a7(std::string& detail) {
  double total_dist = 0.0;
  const int reps = 100;
  for (int r = 0; r < reps; ++r) {
    mvs::SimScenario sc;
    sc.n = 100;
    sc.k = 5;
    sc.rho = 0.25;
    const Dataset ds = generate(sc, 70000 + static_cast<std::uint64_t>(r));
    const FittedModel null_fm = fit(ds, ModelSpec::null_model());
    const MatrixXd means = fixed_design(ds, false) * null_fm.beta;
    const MatrixXd resid = y_matrix(ds) - means;
    const MatrixXd lmat = null_fm.sigma.llt().matrixL();
    MatrixXd white(ds.n(), 5);
    for (int i = 0; i < ds.n(); ++i)
      white.row(i) = lmat.triangularView<Eigen::Lower>()
                         .solve(resid.row(i).transpose())
                         .transpose();
    const Eigen::RowVectorXd mean = white.colwise().mean();
    const MatrixXd cov =
        (white.rowwise() - mean).transpose() * (white.rowwise() - mean) / ds.n();
    total_dist += (cov - MatrixXd::Identity(5, 5)).norm();
  }
  const double avg = total_dist / reps;
  std::ostringstream out;
  out << "cholesky whitening over 100 null datasets: mean Frobenius distance "
      << avg << " (tol 0.15)";
  detail = out.str();
  return avg <= 0.15;
}

// A8: invariant bundle.
bool a8(std::string& detail) {
  std::ostringstream notes;
  bool pass = true;

  // LR >= 0 and nested log-likelihood monotonicity on 200 random instances.
  mvs::Rng rng(808);
  double min_lr = 1e300, min_gap = 1e300;
  for (int it = 0; it < 200; ++it) {
    const int k = 1 + static_cast<int>(rng.bounded(2));
    const int n = 8 + static_cast<int>(rng.bounded(5));
    const Dataset ds = oracle::random_dataset(rng, n, k, 1, it % 3 != 0);
    const ModelSpec null_spec = ModelSpec::null_model();
    const ModelSpec alt_spec = ModelSpec::alternative(2, KnotRule::ObservedRange);
    const LrResult res = lr_statistic(ds, null_spec, alt_spec);
    min_lr = std::min(min_lr, res.lr);
    min_gap = std::min(min_gap, res.alt_fit.loglik - res.null_fit.loglik);
    pass = pass && res.lr >= 0.0 && res.alt_fit.loglik >= res.null_fit.loglik - 1e-8;
  }
  notes << "min LR " << min_lr << ", min loglik gap " << min_gap;

  // Null-fit counter: the covariate scheme estimates the null exactly once.
  mvs::SimScenario sc;
  sc.n = 30;
  sc.k = 2;
  sc.rho = 0.25;
  const Dataset ds = generate(sc, 881);
  const ModelSpec null_spec = ModelSpec::null_model();
  const ModelSpec alt_spec = ModelSpec::alternative(4, KnotRule::Range, -2, 2);
  fit_counters().reset();
  PermutationConfig config;
  config.method = PermMethod::Covariate;
  config.m = 25;
  config.seed = 99;
  run_permutation_test(ds, null_spec, alt_spec, config, g_workers);
  const long null_fits = fit_counters().null_fits.load();
  pass = pass && null_fits == 1;
  notes << "; covariate null fits " << null_fits;

  // Worker-count determinism, all three schemes.
  for (PermMethod method :
       {PermMethod::Covariate, PermMethod::ResidualVector, PermMethod::Cholesky}) {
    config.method = method;
    config.m = 16;
    config.seed = 882;
    const PermutationResult one = run_permutation_test(ds, null_spec, alt_spec, config, 1);
    const PermutationResult four = run_permutation_test(ds, null_spec, alt_spec, config, 4);
    const bool same = one.p_value == four.p_value &&
                      one.lr_replicates == four.lr_replicates &&
                      one.lr_obs == four.lr_obs;
    pass = pass && same;
    if (!same) notes << "; " << perm_method_name(method) << " not deterministic";
  }
  notes << "; workers 1 vs 4 identical";

  // p-value lattice membership.
  bool lattice = true;
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 4ULL}) {
    config.method = PermMethod::Covariate;
    config.m = 13;
    config.seed = seed;
    const double p = run_permutation_test(ds, null_spec, alt_spec, config, g_workers).p_value;
    const double scaled = p * 13.0;
    lattice = lattice && std::fabs(scaled - std::round(scaled)) < 1e-12;
  }
  pass = pass && lattice;
  notes << "; p-values on the /M lattice";

  detail = "invariants: " + notes.str();
  return pass;
}

}  // namespace

int main(int argc, char** argv) {
  g_workers = static_cast<int>(std::thread::hardware_concurrency());
  if (g_workers < 1) g_workers = 1;
  if (const char* env = std::getenv("MVSPLINE_ACCEPT_WORKERS"))
    g_workers = std::max(1, std::atoi(env));
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--workers") == 0 && i + 1 < argc) {
      g_workers = std::max(1, std::atoi(argv[++i]));
    } else if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string item;
      while (std::getline(ss, item, ',')) g_only.insert(item);
    }
  }
  std::printf("acceptance suite (workers=%d)\n", g_workers);

  criterion("A4", a4);
  criterion("A5", a5);
  criterion("A6", a6);
  criterion("A7", a7);
  criterion("A8", a8);
  criterion("A1", a1);
  criterion("A2", a2);
  criterion("A3", a3);
  if (selected("A9"))
    std::printf(
        "A9  ---- full-scale simulation grid (R=2000, M=1000) is not run in "
        "CI; see scripts/full_grid.sh for the offline reproduction\n");

  if (g_failures == 0) {
    std::printf("ACCEPTANCE: all selected criteria passed\n");
    return 0;
  }
  std::printf("ACCEPTANCE: %d criterion(s) FAILED\n", g_failures);
  return 1;
}
