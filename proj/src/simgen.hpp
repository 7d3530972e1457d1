#pragma once

#include <cstdint>
#include <string>

#include "dataset.hpp"

namespace mvs {

enum class GammaPattern { Null, Sparse, NonUniform, Uniform };
enum class ErrorDist { Normal, Sln };

// One simulation cell. Outcomes are generated as
//   Y_ik = beta0 + beta1 * X_i + gamma_k * sin(2 S_i) + b_i + eps_ik
// with (X_i, S_i) standard bivariate normal with correlation 0.5, a shared
// random intercept b_i ~ N(0, rho), and eps_ik scaled to variance 1 - rho
// (normal or standardized lognormal). Marginal Var(Y|X,S) = 1 and
// Corr(Y_ij, Y_ik | X, S) = rho (compound symmetry).
struct SimScenario {
  int n = 100;
  int k = 5;
  double rho = 0.25;
  GammaPattern gamma_pattern = GammaPattern::Null;
  ErrorDist error_dist = ErrorDist::Normal;
  double beta0 = 0.0;
  double beta1 = 1.0;
  // Optional explicit gamma vector (length k); overrides gamma_pattern when
  // non-empty. Used for signal-strength sweeps.
  std::vector<double> gamma_override;

  std::vector<double> gamma() const;
};

const char* gamma_pattern_name(GammaPattern p);
const char* error_dist_name(ErrorDist d);
GammaPattern parse_gamma_pattern(const std::string& s);
ErrorDist parse_error_dist(const std::string& s);

// Balanced dataset with p = 1 (the X covariate). Bit-identical across
// platforms for a fixed (scenario, seed); the per-subject draw order is
// z1, z2 (for X, S), b, then eps_1..eps_K.
Dataset generate(const SimScenario& scenario, std::uint64_t seed);

// n draws of SLN(0,1): (exp(Z) - e^{1/2}) / sqrt((e - 1) e), Z ~ N(0,1);
// population mean 0, variance 1.
std::vector<double> sample_sln(int n, std::uint64_t seed);

}  // namespace mvs
