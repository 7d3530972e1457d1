#include "sim_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "errors.hpp"
#include "parallel.hpp"
#include "rng.hpp"

namespace mvs {

namespace {

// Seed derivation: stream ids 8r and 8r+1+j keep the dataset stream and the
// per-method test streams of replication r disjoint.
std::uint64_t dataset_seed(std::uint64_t base, int r) {
  return Rng::stream(base, 8ULL * static_cast<std::uint64_t>(r)).next_u64();
}
std::uint64_t test_seed(std::uint64_t base, int r, int method_index) {
  return Rng::stream(base, 8ULL * static_cast<std::uint64_t>(r) + 1 +
                               static_cast<std::uint64_t>(method_index))
      .next_u64();
}

struct ReplicateOutcome {
  bool error = false;
  double p_value = 1.0;
  double lr_obs = 0.0;
  int n_failed_fits = 0;
};

std::string format_rate(double v) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

std::string scenario_key(const SimScenario& sc) {
  return "(" + std::to_string(sc.n) + "," + std::to_string(sc.k) + ")";
}

}  // namespace

ExperimentResult run_experiment(const ExperimentPlan& plan, int n_workers) {
  if (plan.r < 1) fail_invalid("plan requires r >= 1");
  if (plan.m < 19) fail_invalid("plan requires m >= 19 (alpha = 0.05 resolution)");
  if (plan.methods.empty()) fail_invalid("plan requires at least one method");

  const auto t0 = std::chrono::steady_clock::now();
  const int n_methods = static_cast<int>(plan.methods.size());

  ModelSpec null_spec = ModelSpec::null_model();
  ModelSpec alt_spec =
      ModelSpec::alternative(plan.n_knots, KnotRule::Range, -2.0, 2.0);

  std::vector<std::vector<ReplicateOutcome>> cells(
      static_cast<std::size_t>(n_methods),
      std::vector<ReplicateOutcome>(static_cast<std::size_t>(plan.r)));

  parallel_for(plan.r, n_workers, [&](int rep) {
    const Dataset ds = generate(plan.scenario, dataset_seed(plan.base_seed, rep));
    for (int j = 0; j < n_methods; ++j) {
      auto& cell = cells[static_cast<std::size_t>(j)][static_cast<std::size_t>(rep)];
      try {
        PermutationConfig config;
        config.method = plan.methods[static_cast<std::size_t>(j)];
        config.m = plan.m;
        config.seed = test_seed(plan.base_seed, rep, j);
        const PermutationResult res =
            run_permutation_test(ds, null_spec, alt_spec, config, 1);
        cell.p_value = res.p_value;
        cell.lr_obs = res.lr_obs;
        cell.n_failed_fits = res.n_failed_fits;
      } catch (const Error&) {
        cell.error = true;
      }
    }
  });

  ExperimentResult out;
  out.scenario = plan.scenario;
  out.r = plan.r;
  out.m = plan.m;
  out.alpha = plan.alpha;
  out.base_seed = plan.base_seed;
  out.n_knots = plan.n_knots;
  for (int j = 0; j < n_methods; ++j) {
    MethodSummary summary;
    summary.method = plan.methods[static_cast<std::size_t>(j)];
    long n_ok = 0, n_reject = 0;
    double lr_sum = 0.0;
    for (const auto& cell : cells[static_cast<std::size_t>(j)]) {
      if (cell.error) {
        ++summary.n_errors;
        continue;
      }
      ++n_ok;
      summary.n_failed_fits += cell.n_failed_fits;
      lr_sum += cell.lr_obs;
      if (cell.p_value < plan.alpha) ++n_reject;
    }
    if (n_ok > 0) {
      summary.rejection_rate = static_cast<double>(n_reject) / static_cast<double>(n_ok);
      summary.se = std::sqrt(summary.rejection_rate * (1.0 - summary.rejection_rate) /
                             static_cast<double>(n_ok));
      summary.mean_lr_obs = lr_sum / static_cast<double>(n_ok);
    }
    out.methods.push_back(summary);
  }
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::string table_report(const std::vector<ExperimentResult>& results) {
  // Column order: rho ascending (outer), gamma pattern in canonical order
  // (inner). Row order: (N,K) blocks, then method.
  const std::vector<GammaPattern> pattern_order = {
      GammaPattern::Null, GammaPattern::Sparse, GammaPattern::NonUniform,
      GammaPattern::Uniform};
  const std::vector<PermMethod> method_order = {
      PermMethod::Covariate, PermMethod::ResidualVector, PermMethod::Cholesky};

  std::ostringstream out;
  if (results.empty()) {
    out << "errors: normal\n  (N,K)     method    \n\n";
    return out.str();
  }
  for (ErrorDist dist : {ErrorDist::Normal, ErrorDist::Sln}) {
    std::set<double> rhos;
    std::set<std::pair<int, int>> sizes;
    std::set<int> patterns_seen;
    std::set<int> methods_seen;
    // cell key: (n, k, method, rho, pattern) -> rejection rate
    std::map<std::tuple<int, int, int, double, int>, double> cells;
    for (const auto& res : results) {
      if (res.scenario.error_dist != dist) continue;
      rhos.insert(res.scenario.rho);
      sizes.insert({res.scenario.n, res.scenario.k});
      patterns_seen.insert(static_cast<int>(res.scenario.gamma_pattern));
      for (const auto& ms : res.methods) {
        methods_seen.insert(static_cast<int>(ms.method));
        cells[{res.scenario.n, res.scenario.k, static_cast<int>(ms.method),
               res.scenario.rho, static_cast<int>(res.scenario.gamma_pattern)}] =
            ms.rejection_rate;
      }
    }
    if (sizes.empty()) continue;
    out << "errors: " << error_dist_name(dist) << "\n";
    std::vector<GammaPattern> patterns;
    for (GammaPattern p : pattern_order)
      if (patterns_seen.count(static_cast<int>(p))) patterns.push_back(p);
    std::vector<PermMethod> methods;
    for (PermMethod mth : method_order)
      if (methods_seen.count(static_cast<int>(mth))) methods.push_back(mth);

    constexpr int kCell = 10;
    out << "  (N,K)     method    ";
    for (double rho : rhos)
      for (GammaPattern p : patterns) {
        char head[32];
        std::snprintf(head, sizeof(head), "%s r=%.2f", gamma_pattern_name(p), rho);
        char padded[32];
        std::snprintf(padded, sizeof(padded), "%*s", kCell + 8, head);
        out << padded;
      }
    out << "\n";
    for (const auto& [n, k] : sizes) {
      for (PermMethod mth : methods) {
        SimScenario sc;
        sc.n = n;
        sc.k = k;
        char row[64];
        std::snprintf(row, sizeof(row), "  %-9s %-10s", scenario_key(sc).c_str(),
                      perm_method_name(mth));
        out << row;
        for (double rho : rhos)
          for (GammaPattern p : patterns) {
            const auto it = cells.find({n, k, static_cast<int>(mth), rho,
                                        static_cast<int>(p)});
            char cell[32];
            std::snprintf(cell, sizeof(cell), "%*s", kCell + 8,
                          it == cells.end() ? "-" : format_rate(it->second).c_str());
            out << cell;
          }
        out << "\n";
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string csv_report(const std::vector<ExperimentResult>& results) {
  std::ostringstream out;
  out << "n,k,rho,pattern,error_dist,method,r,m,alpha,seed,knots,"
         "rejection_rate,se,mean_lr_obs,n_failed_fits,n_errors,wall_seconds\n";
  for (const auto& res : results) {
    for (const auto& ms : res.methods) {
      char line[512];
      std::snprintf(line, sizeof(line),
                    "%d,%d,%g,%s,%s,%s,%d,%d,%g,%llu,%d,%.6f,%.6f,%.6f,%ld,%d,%.2f\n",
                    res.scenario.n, res.scenario.k, res.scenario.rho,
                    gamma_pattern_name(res.scenario.gamma_pattern),
                    error_dist_name(res.scenario.error_dist),
                    perm_method_name(ms.method), res.r, res.m, res.alpha,
                    static_cast<unsigned long long>(res.base_seed), res.n_knots,
                    ms.rejection_rate, ms.se, ms.mean_lr_obs, ms.n_failed_fits,
                    ms.n_errors, res.wall_seconds);
      out << line;
    }
  }
  return out.str();
}

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail_invalid("plan key '" + key + "': malformed number '" + v + "'");
  }
}

long parse_long(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const long d = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    fail_invalid("plan key '" + key + "': malformed integer '" + v + "'");
  }
}

PermMethod parse_method(const std::string& s) {
  if (s == "covariate") return PermMethod::Covariate;
  if (s == "residual" || s == "residual-vector") return PermMethod::ResidualVector;
  if (s == "cholesky") return PermMethod::Cholesky;
  fail_invalid("unknown method '" + s +
               "' (expected covariate, residual, cholesky)");
}

constexpr const char* kValidKeys =
    "n, k, rho, pattern, error_dist, methods, r, m, alpha, seed, knots";

}  // namespace

std::vector<ExperimentPlan> parse_plan_text(const std::string& text,
                                            const std::string& origin) {
  ExperimentPlan base;
  std::vector<double> rhos = {base.scenario.rho};
  std::vector<GammaPattern> patterns = {base.scenario.gamma_pattern};

  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail_invalid(origin + ":" + std::to_string(line_no) +
                   ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "n") {
      base.scenario.n = static_cast<int>(parse_long(value, key));
    } else if (key == "k") {
      base.scenario.k = static_cast<int>(parse_long(value, key));
    } else if (key == "rho") {
      rhos.clear();
      for (const auto& v : split_list(value)) rhos.push_back(parse_double(v, key));
      if (rhos.empty()) fail_invalid("plan key 'rho': empty list");
    } else if (key == "pattern") {
      patterns.clear();
      for (const auto& v : split_list(value)) patterns.push_back(parse_gamma_pattern(v));
      if (patterns.empty()) fail_invalid("plan key 'pattern': empty list");
    } else if (key == "error_dist") {
      base.scenario.error_dist = parse_error_dist(value);
    } else if (key == "methods") {
      base.methods.clear();
      for (const auto& v : split_list(value)) base.methods.push_back(parse_method(v));
    } else if (key == "r") {
      base.r = static_cast<int>(parse_long(value, key));
    } else if (key == "m") {
      base.m = static_cast<int>(parse_long(value, key));
    } else if (key == "alpha") {
      base.alpha = parse_double(value, key);
    } else if (key == "seed") {
      base.base_seed = static_cast<std::uint64_t>(parse_long(value, key));
    } else if (key == "knots") {
      base.n_knots = static_cast<int>(parse_long(value, key));
    } else {
      fail_invalid(origin + ":" + std::to_string(line_no) + ": unknown plan key '" +
                   key + "' (valid keys: " + kValidKeys + ")");
    }
  }

  std::vector<ExperimentPlan> plans;
  for (double rho : rhos) {
    for (GammaPattern pattern : patterns) {
      ExperimentPlan plan = base;
      plan.scenario.rho = rho;
      plan.scenario.gamma_pattern = pattern;
      plans.push_back(std::move(plan));
    }
  }
  return plans;
}

std::vector<ExperimentPlan> parse_plan_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_io("cannot open plan file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_plan_text(text.str(), path);
}

}  // namespace mvs
