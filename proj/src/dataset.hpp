#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace mvs {

// One study subject: a label, the quantitative covariate s, an adjustment
// covariate vector x (length p, possibly empty), and K outcomes with a
// per-entry missingness mask. Missing outcomes are masked explicitly, never
// encoded as sentinel values.
struct Subject {
  std::string id;
  double s = 0.0;
  Eigen::VectorXd x;
  Eigen::VectorXd y;                // length K; value is ignored where masked
  std::vector<std::uint8_t> y_obs;  // length K; 1 = observed
};

// Immutable after construction in all fitting/testing code paths; safe to
// share by const reference across worker threads.
struct Dataset {
  std::vector<Subject> subjects;
  int n_outcomes = 0;                      // K
  std::vector<std::string> covariate_names;  // length p ("x_..." headers)
  std::vector<std::string> outcome_names;    // length K ("y_..." headers)

  int n() const { return static_cast<int>(subjects.size()); }
  int k() const { return n_outcomes; }
  int p() const {
    return subjects.empty() ? static_cast<int>(covariate_names.size())
                            : static_cast<int>(subjects.front().x.size());
  }

  bool is_balanced() const;
  int n_missing() const;
  int n_observed() const;  // total non-missing outcome entries

  // Default x_1..x_p / y_1..y_K names for programmatically built datasets.
  void ensure_names();
};

struct Violation {
  std::string subject;  // empty for dataset-level problems
  std::string field;
  std::string message;
};

// Diagnostic check of every Dataset invariant. Empty result means valid.
std::vector<Violation> validate(const Dataset& ds);

// Throwing variant used by entry points that require a valid dataset.
void require_valid(const Dataset& ds);

// Single-outcome restriction: keeps subjects with outcome k observed and
// drops the rest; the result is complete (balanced) by construction.
Dataset sub_dataset_for_outcome(const Dataset& ds, int outcome_index);

// Column views used by the fitting code.
Eigen::VectorXd s_values(const Dataset& ds);
Eigen::MatrixXd x_matrix(const Dataset& ds);  // N x p
Eigen::MatrixXd y_matrix(const Dataset& ds);  // N x K (masked entries are 0)

}  // namespace mvs
