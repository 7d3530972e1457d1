#include "optimizer.hpp"

#include <cmath>
#include <limits>

namespace mvs {

namespace {

// Forward differences while progress is coarse, central differences once the
// objective change per step is small (forward-difference bias would stall the
// final digits otherwise).
Eigen::VectorXd numeric_gradient(const Objective& f, const Eigen::VectorXd& x,
                                 double f0, double step_scale, bool central,
                                 long& n_evals) {
  const Eigen::Index n = x.size();
  Eigen::VectorXd g(n);
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double h = step_scale * (1.0 + std::fabs(x[i]));
    xp[i] = x[i] + h;
    const double fp = f(xp);
    ++n_evals;
    if (central || !std::isfinite(fp)) {
      xp[i] = x[i] - h;
      const double fm = f(xp);
      ++n_evals;
      if (std::isfinite(fp) && std::isfinite(fm)) {
        g[i] = (fp - fm) / (2.0 * h);
      } else {
        g[i] = std::isfinite(fp)   ? (fp - f0) / h
               : std::isfinite(fm) ? (f0 - fm) / h
                                   : 0.0;
      }
    } else {
      g[i] = (fp - f0) / h;
    }
    xp[i] = x[i];
  }
  return g;
}

}  // namespace

OptimResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0,
                          const OptimOptions& opts) {
  const Eigen::Index n = x0.size();
  OptimResult res;
  res.x = std::move(x0);
  res.f = f(res.x);
  res.n_evals = 1;
  if (!std::isfinite(res.f)) return res;  // infeasible start

  Eigen::MatrixXd hinv = Eigen::MatrixXd::Identity(n, n);
  bool central = false;
  Eigen::VectorXd g =
      numeric_gradient(f, res.x, res.f, opts.fd_step, central, res.n_evals);
  bool first_update = true;

  const auto line_search = [&](const Eigen::VectorXd& dir, double slope,
                               Eigen::VectorXd& x_new, double& f_new) {
    constexpr double c1 = 1e-4;
    double t = 1.0;
    for (int ls = 0; ls < 40; ++ls) {
      x_new = res.x + t * dir;
      f_new = f(x_new);
      ++res.n_evals;
      if (std::isfinite(f_new) && f_new <= res.f + c1 * t * slope) return true;
      t *= 0.5;
    }
    return false;
  };
  const auto clamp_step = [&](Eigen::VectorXd& dir) {
    const double cap = 10.0 * (1.0 + res.x.norm());
    const double norm = dir.norm();
    if (norm > cap) dir *= cap / norm;
  };

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter + 1;

    Eigen::VectorXd dir = -(hinv * g);
    double slope = g.dot(dir);
    if (!(slope < 0.0)) {
      hinv.setIdentity();
      first_update = true;
      dir = -g;
      slope = g.dot(dir);
      if (!(slope < 0.0)) {  // zero gradient
        res.converged = true;
        break;
      }
    }
    clamp_step(dir);
    slope = g.dot(dir);

    double f_new = std::numeric_limits<double>::infinity();
    Eigen::VectorXd x_new;
    bool accepted = line_search(dir, slope, x_new, f_new);
    if (!accepted && !first_update) {
      // Retry along steepest descent before declaring a stationary point.
      hinv.setIdentity();
      first_update = true;
      dir = -g;
      clamp_step(dir);
      slope = g.dot(dir);
      accepted = line_search(dir, slope, x_new, f_new);
    }
    if (!accepted) {
      // No admissible decrease at this gradient accuracy.
      res.converged = true;
      break;
    }

    if (!central &&
        std::fabs(res.f - f_new) <= 1e-4 * (std::fabs(res.f) + 1.0)) {
      central = true;  // refine the gradient for the last digits
    }
    Eigen::VectorXd g_new =
        numeric_gradient(f, x_new, f_new, opts.fd_step, central, res.n_evals);
    const Eigen::VectorXd step = x_new - res.x;
    const Eigen::VectorXd dg = g_new - g;
    const double f_old = res.f;
    res.x = x_new;
    res.f = f_new;
    g = g_new;

    const double sy = step.dot(dg);
    if (sy > 1e-12 * step.norm() * dg.norm()) {
      if (first_update) {
        hinv *= sy / dg.squaredNorm();  // Nocedal-Wright initial scaling
        first_update = false;
      }
      const Eigen::VectorXd hy = hinv * dg;
      const double yhy = dg.dot(hy);
      hinv += ((sy + yhy) / (sy * sy)) * (step * step.transpose()) -
              (hy * step.transpose() + step * hy.transpose()) / sy;
    }

    if (std::fabs(f_old - f_new) <= opts.tol_f * (std::fabs(f_old) + 1.0) ||
        step.lpNorm<Eigen::Infinity>() <= opts.tol_x) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace mvs
