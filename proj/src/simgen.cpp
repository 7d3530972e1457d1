#include "simgen.hpp"

#include <cmath>

#include "errors.hpp"
#include "rng.hpp"

namespace mvs {

namespace {

double sln_draw(Rng& rng) {
  static const double mean = std::exp(0.5);
  static const double sd = std::sqrt((std::exp(1.0) - 1.0) * std::exp(1.0));
  return (std::exp(rng.normal()) - mean) / sd;
}

}  // namespace

std::vector<double> SimScenario::gamma() const {
  if (!gamma_override.empty()) {
    if (static_cast<int>(gamma_override.size()) != k)
      fail_invalid("gamma override must have length K");
    return gamma_override;
  }
  std::vector<double> g(static_cast<std::size_t>(k), 0.0);
  switch (gamma_pattern) {
    case GammaPattern::Null:
      break;
    case GammaPattern::Sparse:
      g[0] = 0.3;
      break;
    case GammaPattern::NonUniform:
      for (int j = 0; j < k; ++j) g[static_cast<std::size_t>(j)] = 0.5 / (j + 1);
      break;
    case GammaPattern::Uniform:
      for (auto& v : g) v = 0.75;
      break;
  }
  return g;
}

const char* gamma_pattern_name(GammaPattern p) {
  switch (p) {
    case GammaPattern::Null: return "null";
    case GammaPattern::Sparse: return "sparse";
    case GammaPattern::NonUniform: return "non-uniform";
    case GammaPattern::Uniform: return "uniform";
  }
  return "?";
}

const char* error_dist_name(ErrorDist d) {
  return d == ErrorDist::Normal ? "normal" : "sln";
}

GammaPattern parse_gamma_pattern(const std::string& s) {
  if (s == "null") return GammaPattern::Null;
  if (s == "sparse") return GammaPattern::Sparse;
  if (s == "non-uniform" || s == "nonuniform") return GammaPattern::NonUniform;
  if (s == "uniform") return GammaPattern::Uniform;
  fail_invalid("unknown gamma pattern '" + s +
               "' (expected null, sparse, non-uniform, uniform)");
}

ErrorDist parse_error_dist(const std::string& s) {
  if (s == "normal") return ErrorDist::Normal;
  if (s == "sln") return ErrorDist::Sln;
  fail_invalid("unknown error distribution '" + s + "' (expected normal, sln)");
}

Dataset generate(const SimScenario& scenario, std::uint64_t seed) {
  if (scenario.n < 1) fail_invalid("scenario requires N >= 1");
  if (scenario.k < 1) fail_invalid("scenario requires K >= 1");
  if (scenario.rho < 0.0 || scenario.rho >= 1.0)
    fail_invalid("scenario requires rho in [0, 1)");

  const std::vector<double> gam = scenario.gamma();
  const double sd_b = std::sqrt(scenario.rho);
  const double sd_eps = std::sqrt(1.0 - scenario.rho);

  Rng rng = Rng::stream(seed, 0);
  Dataset ds;
  ds.n_outcomes = scenario.k;
  ds.covariate_names = {"x_1"};
  ds.ensure_names();
  ds.subjects.reserve(static_cast<std::size_t>(scenario.n));
  for (int i = 0; i < scenario.n; ++i) {
    Subject subj;
    subj.id = "S" + std::to_string(i + 1);
    const double z1 = rng.normal();
    const double z2 = rng.normal();
    const double x = z1;
    const double s = 0.5 * z1 + std::sqrt(0.75) * z2;  // Corr(X, S) = 0.5
    subj.s = s;
    subj.x = Eigen::VectorXd::Constant(1, x);
    const double b = sd_b * rng.normal();
    subj.y.resize(scenario.k);
    subj.y_obs.assign(static_cast<std::size_t>(scenario.k), 1);
    const double signal = std::sin(2.0 * s);
    for (int j = 0; j < scenario.k; ++j) {
      const double eps = scenario.error_dist == ErrorDist::Normal
                             ? sd_eps * rng.normal()
                             : sd_eps * sln_draw(rng);
      subj.y[j] = scenario.beta0 + scenario.beta1 * x +
                  gam[static_cast<std::size_t>(j)] * signal + b + eps;
    }
    ds.subjects.push_back(std::move(subj));
  }
  return ds;
}

std::vector<double> sample_sln(int n, std::uint64_t seed) {
  if (n < 1) fail_invalid("sample size must be positive");
  Rng rng = Rng::stream(seed, 0);
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& v : out) v = sln_draw(rng);
  return out;
}

}  // namespace mvs
