#include "dataset.hpp"

#include <cmath>

#include "errors.hpp"

namespace mvs {

bool Dataset::is_balanced() const { return n_missing() == 0; }

int Dataset::n_missing() const {
  int missing = 0;
  for (const auto& subj : subjects)
    for (std::uint8_t obs : subj.y_obs) missing += obs ? 0 : 1;
  return missing;
}

int Dataset::n_observed() const {
  return n() * n_outcomes - n_missing();
}

void Dataset::ensure_names() {
  if (covariate_names.empty() && p() > 0) {
    for (int j = 0; j < p(); ++j)
      covariate_names.push_back("x_" + std::to_string(j + 1));
  }
  if (outcome_names.empty()) {
    for (int k = 0; k < n_outcomes; ++k)
      outcome_names.push_back("y_" + std::to_string(k + 1));
  }
}

std::vector<Violation> validate(const Dataset& ds) {
  std::vector<Violation> out;
  if (ds.n_outcomes < 1)
    out.push_back({"", "K", "outcome count must be at least 1"});
  if (ds.n() < 2)
    out.push_back({"", "N", "at least two subjects are required"});

  const Eigen::Index p0 = ds.subjects.empty() ? 0 : ds.subjects.front().x.size();
  for (const auto& subj : ds.subjects) {
    if (subj.x.size() != p0)
      out.push_back({subj.id, "x", "inconsistent covariate length"});
    if (!std::isfinite(subj.s))
      out.push_back({subj.id, "s", "non-finite covariate value"});
    for (Eigen::Index j = 0; j < subj.x.size(); ++j)
      if (!std::isfinite(subj.x[j]))
        out.push_back({subj.id, "x", "non-finite covariate value"});
    if (subj.y.size() != ds.n_outcomes ||
        subj.y_obs.size() != static_cast<std::size_t>(ds.n_outcomes)) {
      out.push_back({subj.id, "y", "outcome vector length differs from K"});
      continue;
    }
    int observed = 0;
    for (int k = 0; k < ds.n_outcomes; ++k) {
      if (!subj.y_obs[static_cast<std::size_t>(k)]) continue;
      ++observed;
      if (!std::isfinite(subj.y[k]))
        out.push_back({subj.id, "y", "non-finite outcome value"});
    }
    if (observed == 0)
      out.push_back({subj.id, "y", "all outcomes missing for subject"});
  }
  return out;
}

void require_valid(const Dataset& ds) {
  auto violations = validate(ds);
  if (violations.empty()) return;
  const auto& v = violations.front();
  std::string where = v.subject.empty() ? "dataset" : "subject " + v.subject;
  fail_invalid("invalid dataset: " + where + " [" + v.field + "]: " + v.message +
               (violations.size() > 1
                    ? " (+" + std::to_string(violations.size() - 1) + " more)"
                    : ""));
}

Dataset sub_dataset_for_outcome(const Dataset& ds, int outcome_index) {
  if (outcome_index < 0 || outcome_index >= ds.n_outcomes)
    fail_invalid("outcome index out of range");
  Dataset sub;
  sub.n_outcomes = 1;
  sub.covariate_names = ds.covariate_names;
  if (!ds.outcome_names.empty())
    sub.outcome_names = {ds.outcome_names[static_cast<std::size_t>(outcome_index)]};
  for (const auto& subj : ds.subjects) {
    if (!subj.y_obs[static_cast<std::size_t>(outcome_index)]) continue;
    Subject s = subj;
    s.y = Eigen::VectorXd::Constant(1, subj.y[outcome_index]);
    s.y_obs = {1};
    sub.subjects.push_back(std::move(s));
  }
  return sub;
}

Eigen::VectorXd s_values(const Dataset& ds) {
  Eigen::VectorXd s(ds.n());
  for (int i = 0; i < ds.n(); ++i) s[i] = ds.subjects[static_cast<std::size_t>(i)].s;
  return s;
}

Eigen::MatrixXd x_matrix(const Dataset& ds) {
  Eigen::MatrixXd x(ds.n(), ds.p());
  for (int i = 0; i < ds.n(); ++i)
    x.row(i) = ds.subjects[static_cast<std::size_t>(i)].x.transpose();
  return x;
}

Eigen::MatrixXd y_matrix(const Dataset& ds) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(ds.n(), ds.k());
  for (int i = 0; i < ds.n(); ++i) {
    const auto& subj = ds.subjects[static_cast<std::size_t>(i)];
    for (int k = 0; k < ds.k(); ++k)
      if (subj.y_obs[static_cast<std::size_t>(k)]) y(i, k) = subj.y[k];
  }
  return y;
}

}  // namespace mvs
