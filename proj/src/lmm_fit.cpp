#include "lmm_fit.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <vector>

#include "errors.hpp"
#include "optimizer.hpp"

namespace mvs {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct EvalResult {
  bool ok = false;
  double ml = -kInf;
  double reml = -kInf;
  Eigen::MatrixXd beta;  // d x K (GLS solution for profiled evaluations)
};

Eigen::MatrixXd unvec_beta(const Eigen::VectorXd& theta, int d, int k) {
  Eigen::MatrixXd beta(d, k);
  for (int j = 0; j < k; ++j) beta.col(j) = theta.segment(j * d, d);
  return beta;
}

Eigen::VectorXd vec_beta(const Eigen::MatrixXd& beta) {
  Eigen::VectorXd theta(beta.size());
  for (int j = 0; j < beta.cols(); ++j)
    theta.segment(j * beta.rows(), beta.rows()) = beta.col(j);
  return theta;
}

// log|H| for the REML adjustment; NaN when H is numerically indefinite
// (fixed-beta ML evaluations stay valid in that case).
double logdet_or_nan(const Eigen::MatrixXd& h) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(h);
  const Eigen::VectorXd dv = ldlt.vectorD();
  if (ldlt.info() != Eigen::Success || dv.minCoeff() <= 0.0)
    return std::numeric_limits<double>::quiet_NaN();
  return dv.array().log().sum();
}

// Likelihood evaluator prepared once per (dataset, model structure). Both
// implementations profile the fixed effects by GLS and report the exact
// marginal log-likelihood; neither forms the full V matrix.
class Engine {
 public:
  virtual ~Engine() = default;

  int d() const { return d_; }
  int k() const { return k_; }
  int n_spline() const { return c_; }

  virtual EvalResult profiled(const Eigen::VectorXd& spline_var,
                              const Eigen::MatrixXd& sigma) const = 0;
  virtual EvalResult at(const Eigen::MatrixXd& beta, const Eigen::VectorXd& spline_var,
                        const Eigen::MatrixXd& sigma) const = 0;
  virtual Eigen::MatrixXd blup(const Eigen::MatrixXd& beta,
                               const Eigen::VectorXd& spline_var,
                               const Eigen::MatrixXd& sigma) const = 0;

 protected:
  void check_design_rank(const Eigen::MatrixXd& x) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
    if (qr.rank() < x.cols()) fail_fit("collinear covariates");
  }

  int d_ = 0;
  int k_ = 0;
  int c_ = 0;
};

// Balanced data: one orthogonal rotation of the N x K outcome matrix turns
// the joint density into N independent K-variate normals. With B = U S Q'
// (thin SVD of the spline design), the rotated rows are
//   row j <= r:  N(beta' x_j,  Sigma + s_j^2 diag(spline_var))
//   remainder:   N(beta' x_j,  Sigma)
// and the remainder enters only through cross-product matrices. This is exact
// and costs O(r K^3) per evaluation instead of a (CK)^3 factorization.
class BalancedEngine final : public Engine {
 public:
  BalancedEngine(const Dataset& ds, const SplineBasis* basis, bool include_s) {
    k_ = ds.k();
    n_ = ds.n();
    const Eigen::MatrixXd x = fixed_design(ds, include_s);
    d_ = static_cast<int>(x.cols());
    check_design_rank(x);
    const Eigen::MatrixXd y = y_matrix(ds);

    if (basis != nullptr && basis->size() > 0) {
      c_ = basis->size();
      const Eigen::MatrixXd b = basis->design(s_values(ds));
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(b.transpose() * b);
      const Eigen::VectorXd ev = es.eigenvalues();  // ascending
      const double thresh = std::max(ev.maxCoeff(), 0.0) * 1e-12;
      std::vector<int> keep;
      for (int j = static_cast<int>(ev.size()) - 1; j >= 0; --j)
        if (ev[j] > thresh && ev[j] > 0.0) keep.push_back(j);
      r_ = static_cast<int>(keep.size());
      sv2_.resize(r_);
      q_.resize(c_, r_);
      Eigen::MatrixXd u(n_, r_);
      for (int j = 0; j < r_; ++j) {
        sv2_[j] = ev[keep[static_cast<std::size_t>(j)]];
        q_.col(j) = es.eigenvectors().col(keep[static_cast<std::size_t>(j)]);
        u.col(j) = b * q_.col(j) / std::sqrt(sv2_[j]);
      }
      xt_ = u.transpose() * x;
      yt_ = u.transpose() * y;
    } else {
      r_ = 0;
      xt_.resize(0, d_);
      yt_.resize(0, k_);
    }
    sxx_ = x.transpose() * x - xt_.transpose() * xt_;
    sxy_ = x.transpose() * y - xt_.transpose() * yt_;
    syy_ = y.transpose() * y - yt_.transpose() * yt_;
    eye_k_ = Eigen::MatrixXd::Identity(k_, k_);
    p_.resize(k_, k_);
    t_.resize(k_, k_);
    tinv_.resize(k_, k_);
    yh_.resize(r_, k_);
    sxyh_.resize(d_, k_);
    gk_.resize(d_, k_);
    beta_rot_.resize(d_, k_);
    dvec_.resize(k_);
    syyh_diag_.resize(k_);
    yvy_k_.resize(k_);
    hk_.assign(static_cast<std::size_t>(k_), Eigen::MatrixXd(d_, d_));
  }

  EvalResult profiled(const Eigen::VectorXd& spline_var,
                      const Eigen::MatrixXd& sigma) const override {
    Parts parts;
    EvalResult out;
    if (!assemble(spline_var, sigma, parts)) return out;
    beta_rot_.resize(d_, k_);
    double quad = 0.0, logdet_h_rot = 0.0;
    if (!solve_gls(beta_rot_, quad, logdet_h_rot)) return out;
    const double logdet_h = -2.0 * d_ * parts.logdet_l + logdet_h_rot;
    finish(parts, quad, logdet_h, out, beta_rot_ * tinv_);
    return out;
  }

  EvalResult at(const Eigen::MatrixXd& beta, const Eigen::VectorXd& spline_var,
                const Eigen::MatrixXd& sigma) const override {
    Parts parts;
    EvalResult out;
    if (!assemble(spline_var, sigma, parts)) return out;
    beta_rot_.noalias() = beta * t_;
    double quad = 0.0, logdet_h_rot = 0.0;
    bool h_ok = true;
    for (int k = 0; k < k_; ++k) {
      const auto bk = beta_rot_.col(k);
      const auto& hk = hk_[static_cast<std::size_t>(k)];
      quad += yvy_k_[k] - 2.0 * bk.dot(gk_.col(k)) + bk.dot(hk * bk);
      llt_d_.compute(hk);
      if (llt_d_.info() != Eigen::Success) {
        h_ok = false;
        continue;
      }
      logdet_h_rot += 2.0 * llt_d_.matrixLLT().diagonal().array().log().sum();
    }
    const double logdet_h =
        h_ok ? -2.0 * d_ * parts.logdet_l + logdet_h_rot
             : std::numeric_limits<double>::quiet_NaN();
    finish(parts, quad, logdet_h, out, beta);
    return out;
  }

  Eigen::MatrixXd blup(const Eigen::MatrixXd& beta, const Eigen::VectorXd& spline_var,
                       const Eigen::MatrixXd& sigma) const override {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(c_, k_);
    if (r_ == 0 || c_ == 0) return a;
    Eigen::MatrixXd mhat(r_, k_);
    Eigen::MatrixXd w(k_, k_);
    for (int j = 0; j < r_; ++j) {
      w = sigma;
      w.diagonal() += sv2_[j] * spline_var;
      Eigen::LLT<Eigen::MatrixXd> wllt(w);
      if (wllt.info() != Eigen::Success) fail_fit("covariance not invertible");
      const Eigen::VectorXd resid =
          (yt_.row(j) - xt_.row(j) * beta).transpose();
      const Eigen::VectorXd wr = wllt.solve(resid);
      mhat.row(j) =
          (std::sqrt(sv2_[j]) * spline_var.cwiseProduct(wr)).transpose();
    }
    a.noalias() = q_ * mhat;
    return a;
  }

 private:
  // One objective evaluation. A second change of basis on the outcome axis
  // decouples the K outcomes: with Sigma = L L' and the eigensystem
  // L^-1 diag(spline_var) L^-T = R D R', the map T = L^-T R whitens every row
  // covariance, W_j = Sigma + s_j^2 diag(spline_var) = T^-T (I + s_j^2 D) T^-1,
  // so each evaluation reduces to K univariate GLS problems with row weights
  // 1/(1 + s_j^2 d_k) plus unit-variance remainder rows.
  struct Parts {
    double logdet_v = 0.0;
    double logdet_l = 0.0;  // sum log diag chol(Sigma)
    double n_total = 0.0;
  };

  bool assemble(const Eigen::VectorXd& spline_var, const Eigen::MatrixXd& sigma,
                Parts& parts) const {
    llt_k_.compute(sigma);
    if (llt_k_.info() != Eigen::Success) return false;
    parts.logdet_l = llt_k_.matrixLLT().diagonal().array().log().sum();
    parts.n_total = static_cast<double>(n_) * k_;
    parts.logdet_v = 2.0 * n_ * parts.logdet_l;

    if (r_ > 0 && spline_var.size() > 0) {
      // P = L^-1 diag(sv) L^-T, eigendecomposed.
      p_.noalias() = Eigen::MatrixXd(spline_var.asDiagonal());
      llt_k_.matrixL().solveInPlace(p_);
      llt_k_.matrixL().solveInPlace(p_.transpose());
      eig_.compute(p_);
      if (eig_.info() != Eigen::Success) return false;
      dvec_ = eig_.eigenvalues().cwiseMax(0.0);
      t_ = eig_.eigenvectors();
      llt_k_.matrixU().solveInPlace(t_);  // T = L^-T R
      tinv_.noalias() = eig_.eigenvectors().transpose() * llt_k_.matrixU();
    } else {
      dvec_.setZero(k_);
      t_ = eye_k_;
      llt_k_.matrixU().solveInPlace(t_);
      tinv_ = Eigen::MatrixXd(llt_k_.matrixU());
    }

    yh_.noalias() = yt_ * t_;          // r x K
    sxyh_.noalias() = sxy_ * t_;       // d x K
    syyh_diag_ = ((syy_ * t_).transpose() * t_).diagonal();

    for (int k = 0; k < k_; ++k) {
      auto& hk = hk_[static_cast<std::size_t>(k)];
      hk = sxx_;
      gk_.col(k) = sxyh_.col(k);
      double yk = syyh_diag_[k];
      const double dk = dvec_[k];
      for (int j = 0; j < r_; ++j) {
        const double weight = 1.0 / (1.0 + sv2_[j] * dk);
        const double yv = yh_(j, k);
        parts.logdet_v -= std::log(weight);
        yk += weight * yv * yv;
        const auto xj = xt_.row(j);
        hk.noalias() += weight * (xj.transpose() * xj);
        gk_.col(k).noalias() += (weight * yv) * xj.transpose();
      }
      yvy_k_[k] = yk;
    }
    return true;
  }

  // Profiled GLS in the decoupled basis; fills beta (original basis).
  bool solve_gls(Eigen::MatrixXd& beta_rot, double& quad, double& logdet_h_rot) const {
    quad = 0.0;
    logdet_h_rot = 0.0;
    for (int k = 0; k < k_; ++k) {
      llt_d_.compute(hk_[static_cast<std::size_t>(k)]);
      if (llt_d_.info() != Eigen::Success) return false;
      logdet_h_rot += 2.0 * llt_d_.matrixLLT().diagonal().array().log().sum();
      beta_rot.col(k) = llt_d_.solve(gk_.col(k));
      quad += yvy_k_[k] - beta_rot.col(k).dot(gk_.col(k));
    }
    return true;
  }

  void finish(const Parts& parts, double quad, double logdet_h, EvalResult& out,
              const Eigen::MatrixXd& beta) const {
    out.ml = -0.5 * (parts.n_total * kLog2Pi + parts.logdet_v + quad);
    out.reml =
        out.ml + 0.5 * (d_ * k_) * kLog2Pi - 0.5 * logdet_h;
    out.beta = beta;
    out.ok = std::isfinite(out.ml);
  }

  int n_ = 0;
  int r_ = 0;
  Eigen::VectorXd sv2_;      // squared singular values of the spline design
  Eigen::MatrixXd q_;        // C x r right singular vectors
  Eigen::MatrixXd xt_, yt_;  // rotated top blocks, r x d / r x K
  Eigen::MatrixXd sxx_, sxy_, syy_;  // complement cross-products
  Eigen::MatrixXd eye_k_;
  mutable Eigen::LLT<Eigen::MatrixXd> llt_k_;
  mutable Eigen::LLT<Eigen::MatrixXd> llt_d_;
  mutable Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_;
  mutable Eigen::MatrixXd p_, t_, tinv_, yh_, sxyh_, gk_, beta_rot_;
  mutable Eigen::VectorXd dvec_, syyh_diag_, yvy_k_;
  mutable std::vector<Eigen::MatrixXd> hk_;
};

// General (possibly unbalanced) data: Woodbury identity through the
// CK-dimensional capacitance matrix M = I + G^{1/2} Z' R^-1 Z G^{1/2}, with
// R^-1 assembled from Cholesky factors of per-missingness-pattern subsets of
// Sigma. Everything is accumulated from per-pattern cross-product matrices.
class GeneralEngine final : public Engine {
 public:
  GeneralEngine(const Dataset& ds, const SplineBasis* basis, bool include_s) {
    k_ = ds.k();
    c_ = (basis != nullptr) ? basis->size() : 0;
    const Eigen::MatrixXd x = fixed_design(ds, include_s);
    d_ = static_cast<int>(x.cols());
    check_design_rank(x);
    const Eigen::MatrixXd y = y_matrix(ds);
    Eigen::MatrixXd b;
    if (c_ > 0) b = basis->design(s_values(ds));

    std::map<std::vector<std::uint8_t>, std::vector<int>> groups;
    for (int i = 0; i < ds.n(); ++i)
      groups[ds.subjects[static_cast<std::size_t>(i)].y_obs].push_back(i);

    for (const auto& [mask, rows] : groups) {
      Pattern pat;
      for (int k = 0; k < k_; ++k)
        if (mask[static_cast<std::size_t>(k)]) pat.idx.push_back(k);
      const int ng = static_cast<int>(rows.size());
      const int kg = static_cast<int>(pat.idx.size());
      pat.ng = ng;
      Eigen::MatrixXd xg(ng, d_), bg(ng, std::max(c_, 0)), yg(ng, kg);
      for (int r = 0; r < ng; ++r) {
        xg.row(r) = x.row(rows[static_cast<std::size_t>(r)]);
        if (c_ > 0) bg.row(r) = b.row(rows[static_cast<std::size_t>(r)]);
        for (int a = 0; a < kg; ++a)
          yg(r, a) = y(rows[static_cast<std::size_t>(r)],
                       pat.idx[static_cast<std::size_t>(a)]);
      }
      pat.xx = xg.transpose() * xg;
      pat.xy = xg.transpose() * yg;
      pat.yy = yg.transpose() * yg;
      if (c_ > 0) {
        pat.xb = xg.transpose() * bg;
        pat.bb = bg.transpose() * bg;
        pat.by = bg.transpose() * yg;
      }
      n_obs_total_ += ng * kg;
      pats_.push_back(std::move(pat));
    }
  }

  EvalResult profiled(const Eigen::VectorXd& spline_var,
                      const Eigen::MatrixXd& sigma) const override {
    Parts parts;
    EvalResult out;
    if (!assemble(spline_var, sigma, parts)) return out;
    Eigen::LDLT<Eigen::MatrixXd> hld(parts.h);
    const Eigen::VectorXd dv = hld.vectorD();
    if (hld.info() != Eigen::Success || dv.minCoeff() <= 1e-13 * dv.maxCoeff())
      return out;
    const Eigen::VectorXd theta = hld.solve(parts.g);
    const double quad = parts.yvy - theta.dot(parts.g);
    finish(parts, theta, quad, dv.array().log().sum(), out);
    return out;
  }

  EvalResult at(const Eigen::MatrixXd& beta, const Eigen::VectorXd& spline_var,
                const Eigen::MatrixXd& sigma) const override {
    Parts parts;
    EvalResult out;
    if (!assemble(spline_var, sigma, parts)) return out;
    const Eigen::VectorXd theta = vec_beta(beta);
    const double quad =
        parts.yvy - 2.0 * theta.dot(parts.g) + theta.dot(parts.h * theta);
    finish(parts, theta, quad, logdet_or_nan(parts.h), out);
    return out;
  }

  Eigen::MatrixXd blup(const Eigen::MatrixXd& beta, const Eigen::VectorXd& spline_var,
                       const Eigen::MatrixXd& sigma) const override {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(c_, k_);
    if (c_ == 0) return a;
    Raw raw;
    if (!accumulate(sigma, raw)) fail_fit("covariance not invertible");
    const Eigen::VectorXd dscale = spline_scale(spline_var);
    Eigen::MatrixXd m = raw.a_zz;
    m.array().colwise() *= dscale.array();
    m.array().rowwise() *= dscale.transpose().array();
    m.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> mllt(m);
    if (mllt.info() != Eigen::Success) fail_fit("covariance not invertible");

    const Eigen::VectorXd theta = vec_beta(beta);
    const Eigen::VectorXd u_zr = raw.u_zy - raw.a_xz.transpose() * theta;
    const Eigen::VectorXd t = mllt.solve(dscale.cwiseProduct(u_zr));
    const Eigen::VectorXd zv = u_zr - raw.a_zz * dscale.cwiseProduct(t);
    for (int k = 0; k < k_; ++k) a.col(k) = spline_var[k] * zv.segment(k * c_, c_);
    return a;
  }

 private:
  struct Pattern {
    std::vector<int> idx;
    int ng = 0;
    Eigen::MatrixXd xx, xy, yy, xb, bb, by;
  };

  struct Raw {
    Eigen::MatrixXd a_xx, a_xz, a_zz;
    Eigen::VectorXd u_xy, u_zy;
    double y_ry = 0.0;
    double logdet_r = 0.0;
  };

  struct Parts {
    Eigen::MatrixXd h;
    Eigen::VectorXd g;
    double yvy = 0.0;
    double logdet_v = 0.0;
    double n_total = 0.0;
  };

  Eigen::VectorXd spline_scale(const Eigen::VectorXd& spline_var) const {
    Eigen::VectorXd dscale(c_ * k_);
    for (int k = 0; k < k_; ++k)
      dscale.segment(k * c_, c_).setConstant(
          std::sqrt(std::max(spline_var.size() > 0 ? spline_var[k] : 0.0, 0.0)));
    return dscale;
  }

  bool accumulate(const Eigen::MatrixXd& sigma, Raw& raw) const {
    const int dk = d_ * k_;
    const int ck = c_ * k_;
    raw.a_xx = Eigen::MatrixXd::Zero(dk, dk);
    raw.u_xy = Eigen::VectorXd::Zero(dk);
    if (c_ > 0) {
      raw.a_xz = Eigen::MatrixXd::Zero(dk, ck);
      raw.a_zz = Eigen::MatrixXd::Zero(ck, ck);
      raw.u_zy = Eigen::VectorXd::Zero(ck);
    }
    for (const auto& pat : pats_) {
      const int kg = static_cast<int>(pat.idx.size());
      Eigen::MatrixXd sg(kg, kg);
      for (int a = 0; a < kg; ++a)
        for (int b = 0; b < kg; ++b)
          sg(a, b) = sigma(pat.idx[static_cast<std::size_t>(a)],
                           pat.idx[static_cast<std::size_t>(b)]);
      Eigen::LLT<Eigen::MatrixXd> llt(sg);
      if (llt.info() != Eigen::Success) return false;
      const Eigen::MatrixXd sginv =
          llt.solve(Eigen::MatrixXd::Identity(kg, kg));
      raw.logdet_r +=
          pat.ng * 2.0 *
          Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
      raw.y_ry += sginv.cwiseProduct(pat.yy).sum();
      const Eigen::MatrixXd xys = pat.xy * sginv;
      Eigen::MatrixXd bys;
      if (c_ > 0) bys = pat.by * sginv;
      for (int a = 0; a < kg; ++a) {
        const int k = pat.idx[static_cast<std::size_t>(a)];
        raw.u_xy.segment(k * d_, d_) += xys.col(a);
        if (c_ > 0) raw.u_zy.segment(k * c_, c_) += bys.col(a);
        for (int b = 0; b < kg; ++b) {
          const int l = pat.idx[static_cast<std::size_t>(b)];
          const double w = sginv(a, b);
          raw.a_xx.block(k * d_, l * d_, d_, d_).noalias() += w * pat.xx;
          if (c_ > 0) {
            raw.a_xz.block(k * d_, l * c_, d_, c_).noalias() += w * pat.xb;
            raw.a_zz.block(k * c_, l * c_, c_, c_).noalias() += w * pat.bb;
          }
        }
      }
    }
    return true;
  }

  bool assemble(const Eigen::VectorXd& spline_var, const Eigen::MatrixXd& sigma,
                Parts& parts) const {
    Raw raw;
    if (!accumulate(sigma, raw)) return false;
    parts.n_total = static_cast<double>(n_obs_total_);
    if (c_ == 0) {
      parts.h = std::move(raw.a_xx);
      parts.g = std::move(raw.u_xy);
      parts.yvy = raw.y_ry;
      parts.logdet_v = raw.logdet_r;
      return true;
    }
    const Eigen::VectorXd dscale = spline_scale(spline_var);
    Eigen::MatrixXd m = raw.a_zz;
    m.array().colwise() *= dscale.array();
    m.array().rowwise() *= dscale.transpose().array();
    m.diagonal().array() += 1.0;
    Eigen::LLT<Eigen::MatrixXd> mllt(m);
    if (mllt.info() != Eigen::Success) return false;
    const double logdet_m =
        2.0 * Eigen::MatrixXd(mllt.matrixL()).diagonal().array().log().sum();

    Eigen::MatrixXd w1 = raw.a_xz;
    w1.array().rowwise() *= dscale.transpose().array();  // X'R^-1 Z D
    const Eigen::VectorXd du = dscale.cwiseProduct(raw.u_zy);
    const Eigen::MatrixXd t = mllt.solve(w1.transpose());
    parts.h = raw.a_xx - w1 * t;
    parts.g = raw.u_xy - w1 * mllt.solve(du);
    parts.yvy = raw.y_ry - du.dot(mllt.solve(du));
    parts.logdet_v = raw.logdet_r + logdet_m;
    return true;
  }

  void finish(const Parts& parts, const Eigen::VectorXd& theta, double quad,
              double logdet_h, EvalResult& out) const {
    out.ml = -0.5 * (parts.n_total * kLog2Pi + parts.logdet_v + quad);
    out.reml = out.ml + 0.5 * theta.size() * kLog2Pi - 0.5 * logdet_h;
    out.beta = unvec_beta(theta, d_, k_);
    out.ok = std::isfinite(out.ml);
  }

  std::vector<Pattern> pats_;
  int n_obs_total_ = 0;
};

std::unique_ptr<Engine> make_engine(const Dataset& ds, const SplineBasis* basis,
                                    bool include_s) {
  if (ds.is_balanced())
    return std::make_unique<BalancedEngine>(ds, basis, include_s);
  return std::make_unique<GeneralEngine>(ds, basis, include_s);
}

// --- covariance parameter packing -------------------------------------------
//
// The numerical search runs over theta = [tau_1..tau_K, c(Sigma)], where
// spline_var_k = tau_k^2 (so the tested boundary spline_var = 0 is an interior
// point of the parameterization) and c(Sigma) is the log-Cholesky coding:
// log-diagonal followed by the free sub-diagonal, column by column.

int n_chol_params(int k) { return k * (k + 1) / 2; }

void pack_chol(const Eigen::MatrixXd& l, Eigen::VectorXd& theta, int offset) {
  int pos = offset;
  for (int j = 0; j < l.cols(); ++j) {
    theta[pos++] = std::log(std::max(l(j, j), 1e-10));
    for (int i = j + 1; i < l.rows(); ++i) theta[pos++] = l(i, j);
  }
}

Eigen::MatrixXd unpack_chol(const Eigen::VectorXd& theta, int offset, int k) {
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(k, k);
  int pos = offset;
  for (int j = 0; j < k; ++j) {
    l(j, j) = std::exp(theta[pos++]);
    for (int i = j + 1; i < k; ++i) l(i, j) = theta[pos++];
  }
  return l;
}

bool theta_in_bounds(const Eigen::VectorXd& theta) {
  return theta.lpNorm<Eigen::Infinity>() < 40.0;
}

// --- closed forms ------------------------------------------------------------

struct Mvreg {
  Eigen::MatrixXd beta;
  Eigen::MatrixXd sigma;
};

// Balanced multivariate regression with a design shared by all outcomes: the
// GLS estimate does not depend on Sigma, so ML is per-outcome least squares
// with Sigma = E'E/N (REML divides by N - d instead).
Mvreg balanced_mvreg(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                     Estimation est) {
  Mvreg out;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(x);
  out.beta = qr.solve(y);
  const Eigen::MatrixXd resid = y - x * out.beta;
  const double denom =
      est == Estimation::ML
          ? static_cast<double>(x.rows())
          : static_cast<double>(x.rows()) - static_cast<double>(x.cols());
  out.sigma = resid.transpose() * resid / denom;
  return out;
}

// Pairwise-complete residual covariance used to start unbalanced searches.
Eigen::MatrixXd pairwise_start_sigma(const Dataset& ds, const Eigen::MatrixXd& x) {
  const int n = ds.n();
  const int k = ds.k();
  Eigen::MatrixXd resid = Eigen::MatrixXd::Zero(n, k);
  Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic> obs(n, k);
  for (int j = 0; j < k; ++j) {
    std::vector<int> rows;
    for (int i = 0; i < n; ++i) {
      obs(i, j) = ds.subjects[static_cast<std::size_t>(i)].y_obs[static_cast<std::size_t>(j)] != 0;
      if (obs(i, j)) rows.push_back(i);
    }
    Eigen::MatrixXd xj(rows.size(), x.cols());
    Eigen::VectorXd yj(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      xj.row(static_cast<Eigen::Index>(r)) = x.row(rows[r]);
      yj[static_cast<Eigen::Index>(r)] = ds.subjects[static_cast<std::size_t>(rows[r])].y[j];
    }
    const Eigen::VectorXd bj = xj.colPivHouseholderQr().solve(yj);
    for (std::size_t r = 0; r < rows.size(); ++r)
      resid(rows[r], j) = yj[static_cast<Eigen::Index>(r)] - xj.row(static_cast<Eigen::Index>(r)).dot(bj);
  }
  Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(k, k);
  for (int a = 0; a < k; ++a) {
    for (int b = a; b < k; ++b) {
      double sum = 0.0;
      int cnt = 0;
      for (int i = 0; i < n; ++i) {
        if (!obs(i, a) || !obs(i, b)) continue;
        sum += resid(i, a) * resid(i, b);
        ++cnt;
      }
      sigma(a, b) = sigma(b, a) = cnt > 0 ? sum / cnt : 0.0;
    }
  }
  // Clamp to a safely positive-definite matrix.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
  const double floor = std::max(es.eigenvalues().maxCoeff(), 1e-8) * 1e-4;
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(floor);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

ModelSpec null_of(const ModelSpec& spec) {
  ModelSpec null_spec = spec;
  null_spec.include_s = false;
  return null_spec;
}

void check_fit_preconditions(const Dataset& ds) {
  require_valid(ds);
  if (ds.n() <= ds.k() + ds.p() + 1)
    fail_fit("insufficient subjects for unstructured covariance");
}

FittedModel fit_null_impl(const Dataset& ds, const ModelSpec& spec) {
  const int k = ds.k();
  const int d0 = 1 + ds.p();
  FittedModel fm;
  fm.is_alternative = false;
  fm.estimation = spec.estimation;
  fm.n_params = d0 * k + n_chol_params(k);

  const auto engine = make_engine(ds, nullptr, false);
  if (ds.is_balanced()) {
    const Mvreg reg = balanced_mvreg(fixed_design(ds, false), y_matrix(ds),
                                     spec.estimation);
    const EvalResult ev = engine->profiled(Eigen::VectorXd(), reg.sigma);
    if (!ev.ok) fail_fit("covariance not invertible");
    fm.beta = reg.beta;
    fm.sigma = reg.sigma;
    fm.loglik = spec.estimation == Estimation::ML ? ev.ml : ev.reml;
    fm.converged = true;
    return fm;
  }

  // Unbalanced: no closed form; maximize the GLS-profiled likelihood over the
  // log-Cholesky coding of Sigma.
  const bool reml = spec.estimation == Estimation::REML;
  const Objective objective = [&](const Eigen::VectorXd& theta) {
    if (!theta_in_bounds(theta)) return kInf;
    const Eigen::MatrixXd l = unpack_chol(theta, 0, k);
    const EvalResult ev = engine->profiled(Eigen::VectorXd(), l * l.transpose());
    if (!ev.ok) return kInf;
    return reml ? -ev.reml : -ev.ml;
  };
  const Eigen::MatrixXd sigma0 = pairwise_start_sigma(ds, fixed_design(ds, false));
  Eigen::VectorXd theta0(n_chol_params(k));
  pack_chol(Eigen::LLT<Eigen::MatrixXd>(sigma0).matrixL(), theta0, 0);
  OptimOptions opts;
  opts.max_iter = spec.max_iter;
  opts.tol_f = spec.convergence_tol;
  opts.tol_x = spec.convergence_tol;
  const OptimResult res = minimize_bfgs(objective, theta0, opts);
  if (!std::isfinite(res.f)) fail_fit("covariance not invertible");

  const Eigen::MatrixXd l = unpack_chol(res.x, 0, k);
  fm.sigma = l * l.transpose();
  const EvalResult ev = engine->profiled(Eigen::VectorXd(), fm.sigma);
  if (!ev.ok) fail_fit("covariance not invertible");
  fm.beta = ev.beta;
  fm.loglik = reml ? ev.reml : ev.ml;
  fm.converged = res.converged;
  return fm;
}

FittedModel fit_alt_impl(const Dataset& ds, const ModelSpec& spec,
                         const AltFitHints& hints) {
  const int k = ds.k();
  const Eigen::VectorXd s = s_values(ds);
  const SplineBasis basis = resolve_basis(spec, s);

  Eigen::VectorXd s_sorted = s;
  std::sort(s_sorted.begin(), s_sorted.end());
  int distinct = ds.n() > 0 ? 1 : 0;
  for (int i = 1; i < ds.n(); ++i)
    if (s_sorted[i] != s_sorted[i - 1]) ++distinct;
  if (distinct < basis.size() + 2)
    fail_fit("alternative model requires at least C+2 distinct s values");

  const auto engine = make_engine(ds, &basis, true);
  const int d = engine->d();
  const bool reml = spec.estimation == Estimation::REML;

  FittedModel local_null;
  const FittedModel* null_fit = hints.null_fit;
  if (null_fit == nullptr || null_fit->is_alternative ||
      null_fit->estimation != spec.estimation) {
    local_null = fit_null_impl(ds, null_of(spec));
    null_fit = &local_null;
  }

  // Boundary candidate: the tau = 0 slice is a pure fixed-effects regression
  // including the linear s term, so its Sigma-profile optimum is available
  // without touching the optimizer on balanced data. This realizes the
  // null-like multi-start exactly (a gradient search started at tau = 0
  // cannot leave the boundary because d(tau^2)/d(tau) vanishes there).
  Eigen::MatrixXd boundary_sigma;
  bool boundary_converged = true;
  if (ds.is_balanced()) {
    boundary_sigma =
        balanced_mvreg(fixed_design(ds, true), y_matrix(ds), spec.estimation).sigma;
  } else {
    const Objective lin_obj = [&](const Eigen::VectorXd& theta) {
      if (!theta_in_bounds(theta)) return kInf;
      const Eigen::MatrixXd l = unpack_chol(theta, 0, k);
      const EvalResult ev =
          engine->profiled(Eigen::VectorXd::Zero(k), l * l.transpose());
      if (!ev.ok) return kInf;
      return reml ? -ev.reml : -ev.ml;
    };
    Eigen::VectorXd theta0(n_chol_params(k));
    pack_chol(Eigen::LLT<Eigen::MatrixXd>(null_fit->sigma).matrixL(), theta0, 0);
    OptimOptions opts;
    opts.max_iter = spec.max_iter * hints.max_iter_mult;
    opts.tol_f = spec.convergence_tol;
    opts.tol_x = spec.convergence_tol;
    const OptimResult res = minimize_bfgs(lin_obj, theta0, opts);
    const Eigen::MatrixXd l = unpack_chol(res.x, 0, k);
    boundary_sigma = l * l.transpose();
    boundary_converged = res.converged;
  }
  const EvalResult boundary_eval =
      engine->profiled(Eigen::VectorXd::Zero(k), boundary_sigma);
  if (!boundary_eval.ok) fail_fit("covariance not invertible");
  const double boundary_value = reml ? boundary_eval.reml : boundary_eval.ml;

  // Interior searches over theta = [tau, logchol(Sigma)].
  const int n_par = k + n_chol_params(k);
  const Objective objective = [&](const Eigen::VectorXd& theta) {
    if (!theta_in_bounds(theta)) return kInf;
    const Eigen::VectorXd sv = theta.head(k).array().square().matrix();
    const Eigen::MatrixXd l = unpack_chol(theta, k, k);
    const EvalResult ev = engine->profiled(sv, l * l.transpose());
    if (!ev.ok) return kInf;
    return reml ? -ev.reml : -ev.ml;
  };
  OptimOptions opts;
  opts.max_iter = spec.max_iter * hints.max_iter_mult;
  opts.tol_f = spec.convergence_tol;
  opts.tol_x = spec.convergence_tol;

  const auto start_at = [&](double var_frac) {
    Eigen::VectorXd theta0(n_par);
    theta0.head(k) =
        (var_frac * null_fit->sigma.diagonal().array()).sqrt().matrix();
    pack_chol(Eigen::LLT<Eigen::MatrixXd>(null_fit->sigma).matrixL(), theta0, k);
    return theta0;
  };

  bool searches_converged = boundary_converged;
  double best_value = boundary_value;
  Eigen::VectorXd best_theta;  // empty while the boundary leads

  const auto run_search = [&](double var_frac) {
    const OptimResult res = minimize_bfgs(objective, start_at(var_frac), opts);
    searches_converged = searches_converged && res.converged;
    if (std::isfinite(res.f) && -res.f > best_value) {
      best_value = -res.f;
      best_theta = res.x;
    }
  };
  run_search(hints.start_var_frac);

  // The profiled likelihood in a spline variance can be bimodal (a
  // small-variance mode near the boundary and a rough-fit mode at large
  // variance). Probe the large-variance ray and search again when it is
  // competitive.
  double probe_best = -kInf;
  double probe_frac = 0.0;
  for (double frac : {2.0, 8.0, 32.0, 128.0}) {
    const double value = -objective(start_at(frac));
    if (value > probe_best) {
      probe_best = value;
      probe_frac = frac;
    }
  }
  if (probe_best > best_value - 5.0) run_search(probe_frac);

  FittedModel fm;
  fm.is_alternative = true;
  fm.estimation = spec.estimation;
  fm.basis = basis;
  fm.n_params = d * k + k + n_chol_params(k);

  if (best_theta.size() > 0) {
    fm.spline_var = best_theta.head(k).array().square().matrix();
    const Eigen::MatrixXd l = unpack_chol(best_theta, k, k);
    fm.sigma = l * l.transpose();
    const EvalResult ev = engine->profiled(fm.spline_var, fm.sigma);
    if (!ev.ok) fail_fit("covariance not invertible");
    fm.beta = ev.beta;
    fm.loglik = reml ? ev.reml : ev.ml;
  } else {
    fm.spline_var = Eigen::VectorXd::Zero(k);
    fm.sigma = boundary_sigma;
    fm.beta = boundary_eval.beta;
    fm.loglik = boundary_value;
  }
  fm.converged = searches_converged;
  fm.blups = engine->blup(fm.beta, fm.spline_var, fm.sigma);
  return fm;
}

}  // namespace

SplineBasis resolve_basis(const ModelSpec& spec, const Eigen::VectorXd& s) {
  switch (spec.knot_rule) {
    case KnotRule::Explicit:
      return make_knots(KnotRule::Explicit,
                        static_cast<int>(spec.explicit_knots.size()), 0.0, 0.0,
                        spec.explicit_knots);
    case KnotRule::Range:
      return make_knots(KnotRule::Range, spec.n_knots, spec.knot_lo, spec.knot_hi,
                        {});
    case KnotRule::ObservedRange:
    default:
      return make_knots(KnotRule::ObservedRange, spec.n_knots, 0.0, 0.0,
                        std::span<const double>(s.data(), static_cast<std::size_t>(s.size())));
  }
}

Eigen::MatrixXd fixed_design(const Dataset& ds, bool include_s) {
  const int n = ds.n();
  const int p = ds.p();
  Eigen::MatrixXd x(n, 1 + p + (include_s ? 1 : 0));
  x.col(0).setOnes();
  for (int i = 0; i < n; ++i) {
    const auto& subj = ds.subjects[static_cast<std::size_t>(i)];
    for (int j = 0; j < p; ++j) x(i, 1 + j) = subj.x[j];
    if (include_s) x(i, 1 + p) = subj.s;
  }
  return x;
}

double loglik(const Dataset& ds, const ModelSpec& spec, const Eigen::MatrixXd& beta,
              const CovarianceParams& cov) {
  require_valid(ds);
  const int k = ds.k();
  const int d = 1 + ds.p() + (spec.include_s ? 1 : 0);
  if (beta.rows() != d || beta.cols() != k)
    fail_invalid("beta dimension mismatch: expected " + std::to_string(d) + " x " +
                 std::to_string(k));
  if (cov.sigma_chol.rows() != k || cov.sigma_chol.cols() != k)
    fail_invalid("sigma factor dimension mismatch");
  for (int j = 0; j < k; ++j)
    if (!(cov.sigma_chol(j, j) > 0.0))
      fail_invalid("sigma factor requires a strictly positive diagonal");
  Eigen::VectorXd sv = cov.spline_var;
  SplineBasis basis;
  if (spec.include_s) {
    if (sv.size() != k) fail_invalid("spline variance vector must have length K");
    if (sv.minCoeff() < 0.0) fail_invalid("spline variances must be non-negative");
    basis = resolve_basis(spec, s_values(ds));
  } else {
    if (sv.size() != 0)
      fail_invalid("null model carries no spline variance parameters");
  }
  const auto engine =
      make_engine(ds, spec.include_s ? &basis : nullptr, spec.include_s);
  const EvalResult ev = engine->at(beta, sv, cov.sigma());
  if (!ev.ok) fail_fit("covariance not invertible");
  return spec.estimation == Estimation::REML ? ev.reml : ev.ml;
}

ProfiledValue profiled_loglik(const Dataset& ds, const ModelSpec& spec,
                              const Eigen::VectorXd& spline_var,
                              const Eigen::MatrixXd& sigma) {
  require_valid(ds);
  SplineBasis basis;
  if (spec.include_s) basis = resolve_basis(spec, s_values(ds));
  const auto engine =
      make_engine(ds, spec.include_s ? &basis : nullptr, spec.include_s);
  const EvalResult ev = engine->profiled(spline_var, sigma);
  if (!ev.ok) fail_fit("covariance not invertible");
  return {ev.ml, ev.reml, ev.beta};
}

FittedModel fit(const Dataset& ds, const ModelSpec& spec) {
  check_fit_preconditions(ds);
  if (spec.include_s) {
    fit_counters().alt_fits.fetch_add(1, std::memory_order_relaxed);
    return fit_alt_impl(ds, spec, {});
  }
  fit_counters().null_fits.fetch_add(1, std::memory_order_relaxed);
  return fit_null_impl(ds, spec);
}

FittedModel fit_alternative(const Dataset& ds, const ModelSpec& spec,
                            const AltFitHints& hints) {
  if (!spec.include_s) fail_invalid("fit_alternative requires include_s");
  check_fit_preconditions(ds);
  fit_counters().alt_fits.fetch_add(1, std::memory_order_relaxed);
  return fit_alt_impl(ds, spec, hints);
}

Eigen::MatrixXd blup(const Dataset& ds, const ModelSpec& spec,
                     const FittedModel& fitted) {
  if (!fitted.is_alternative || !spec.include_s)
    fail_invalid("no random effects in null model");
  require_valid(ds);
  const auto engine = make_engine(ds, &fitted.basis, true);
  return engine->blup(fitted.beta, fitted.spline_var, fitted.sigma);
}

Eigen::MatrixXd fitted_curve(const FittedModel& fitted, const Eigen::VectorXd& s_grid,
                             const Eigen::VectorXd& reference_x) {
  if (!fitted.is_alternative)
    fail_invalid("fitted curves require an alternative-model fit");
  if (s_grid.size() == 0) fail_invalid("empty s grid");
  const int k = static_cast<int>(fitted.beta.cols());
  const int p = static_cast<int>(fitted.beta.rows()) - 2;
  if (reference_x.size() != p)
    fail_invalid("reference covariate vector must have length p");
  Eigen::MatrixXd curves(s_grid.size(), k);
  for (Eigen::Index i = 0; i < s_grid.size(); ++i) {
    const double s = s_grid[i];
    const Eigen::VectorXd bs = fitted.basis.evaluate(s);
    for (int j = 0; j < k; ++j) {
      double val = fitted.beta(0, j);
      for (int q = 0; q < p; ++q) val += fitted.beta(1 + q, j) * reference_x[q];
      val += fitted.beta(1 + p, j) * s;
      if (fitted.blups.size() > 0) val += bs.dot(fitted.blups.col(j));
      curves(i, j) = val;
    }
  }
  return curves;
}

FitCounters& fit_counters() {
  static FitCounters counters;
  return counters;
}

}  // namespace mvs
