#pragma once

// Iterative GLS estimation of time-varying loadings on a wavelet expansion.
//
// With Theta = I_N (x) Psi and Sigma_e = Gamma_e (x) I_T the normal equations
// factor as (Gamma_e^{-1} (x) Psi'Psi) vec(beta) = vec(Psi' Y Gamma_e^{-1}),
// so no NT-sized matrix is ever formed.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "tvload/error.hpp"
#include "tvload/factors.hpp"
#include "tvload/panel.hpp"
#include "tvload/wavelet.hpp"

namespace tvload::gls {

/// Psi = [Psi^(1) .. Psi^(r)], Psi^(i)[t, c] = B[t, c] * F[t, i].
struct DesignBlock {
  Eigen::MatrixXd Psi;  // T x (r * 2^J)
  int r = 0;
  int J = 0;
  int T = 0;

  [[nodiscard]] int per_factor() const noexcept { return 1 << J; }
};

/// Wavelet coefficients of every loading function. Column m holds beta^(m):
/// factor-major blocks of 2^J coefficients in basis column order.
struct CoefficientBlock {
  int N = 0;
  int r = 0;
  int n_basis = 0;
  Eigen::MatrixXd data;  // (r * n_basis) x N

  CoefficientBlock() = default;
  CoefficientBlock(int n, int factors, int basis_cols)
      : N(n), r(factors), n_basis(basis_cols), data(Eigen::MatrixXd::Zero(factors * basis_cols, n)) {}

  double& operator()(int m, int n, int c) { return data(n * n_basis + c, m); }
  double operator()(int m, int n, int c) const { return data(n * n_basis + c, m); }

  [[nodiscard]] Eigen::VectorXd coefficients(int m, int n) const { return data.block(n * n_basis, m, n_basis, 1); }
  [[nodiscard]] Eigen::Index size() const noexcept { return data.size(); }
};

/// Lambda(t) for every grid point, stored as one T x N matrix per factor.
struct LoadingField {
  std::vector<Eigen::MatrixXd> by_factor;

  LoadingField() = default;
  LoadingField(int T, int N, int r) : by_factor(static_cast<std::size_t>(r), Eigen::MatrixXd::Zero(T, N)) {}

  [[nodiscard]] int r() const noexcept { return static_cast<int>(by_factor.size()); }
  [[nodiscard]] int T() const noexcept { return by_factor.empty() ? 0 : static_cast<int>(by_factor[0].rows()); }
  [[nodiscard]] int N() const noexcept { return by_factor.empty() ? 0 : static_cast<int>(by_factor[0].cols()); }

  double& operator()(int t, int m, int n) { return by_factor[static_cast<std::size_t>(n)](t, m); }
  double operator()(int t, int m, int n) const { return by_factor[static_cast<std::size_t>(n)](t, m); }

  /// The N x r loading matrix at grid row t.
  [[nodiscard]] Eigen::MatrixXd slice(int t) const {
    Eigen::MatrixXd s(N(), r());
    for (int n = 0; n < r(); ++n) s.col(n) = by_factor[static_cast<std::size_t>(n)].row(t).transpose();
    return s;
  }

  [[nodiscard]] bool same_shape(const LoadingField& other) const noexcept {
    return T() == other.T() && N() == other.N() && r() == other.r();
  }
};

enum class ConvergenceNorm { SumOverT, MaxOverT };

struct FitOptions {
  double delta = 1e-6;
  int max_iter = 50;
  ConvergenceNorm norm = ConvergenceNorm::SumOverT;
};

struct GlsFit {
  CoefficientBlock beta;
  LoadingField Lambda;
  Eigen::MatrixXd Gamma_e;     // N x N residual covariance of the final fit
  int n_iter = 0;              // GLS solves performed; iteration 1 uses Sigma_e = I
  std::vector<double> deltas;  // deltas[i] = change between iterations i+1 and i+2
  bool converged = false;
};

inline DesignBlock build_design(const factors::FactorEstimate& est, const wavelet::Basis& basis) {
  require(est.T() == basis.T, ErrorKind::Shape,
          "factor matrix has " + std::to_string(est.T()) + " rows but the basis grid has " +
              std::to_string(basis.T));
  DesignBlock d;
  d.r = est.r();
  d.J = basis.J;
  d.T = basis.T;
  const int p = basis.n_columns();
  d.Psi.resize(basis.T, d.r * p);
  for (int i = 0; i < d.r; ++i) {
    d.Psi.middleCols(i * p, p) = basis.B.array().colwise() * est.F.col(i).array();
  }
  return d;
}

namespace detail {

// Columns of Psi that are linearly dependent on earlier ones, by pivoted QR.
inline std::string offending_columns(const Eigen::MatrixXd& psi) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(psi);
  qr.setThreshold(1e-10);
  const auto rank = qr.rank();
  std::string cols;
  for (Eigen::Index i = rank; i < psi.cols(); ++i) {
    if (!cols.empty()) cols += ",";
    cols += std::to_string(qr.colsPermutation().indices()(i));
  }
  return cols;
}

}  // namespace detail

/// Cholesky factor of Psi'Psi, with rank deficiency reported by column.
inline Eigen::LLT<Eigen::MatrixXd> gram_factor(const DesignBlock& design) {
  const Eigen::MatrixXd gram = design.Psi.transpose() * design.Psi;
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || !(llt.rcond() > 1e-13)) {
    fail(ErrorKind::RankDeficiency,
         "design Psi'Psi is singular; dependent columns: " + detail::offending_columns(design.Psi));
  }
  return llt;
}

/// GLS coefficients for Sigma_e = Gamma_e (x) I_T.
inline CoefficientBlock gls_step(const Panel& panel, const DesignBlock& design, const Eigen::MatrixXd& gamma_e) {
  const int N = panel.N();
  require(panel.T() == design.T, ErrorKind::Shape, "panel and design have different T");
  require(gamma_e.rows() == N && gamma_e.cols() == N, ErrorKind::Shape, "Gamma_e must be N x N");
  const auto gram = gram_factor(design);
  Eigen::LLT<Eigen::MatrixXd> gamma_llt(gamma_e);
  require(gamma_llt.info() == Eigen::Success, ErrorKind::Numeric, "Gamma_e is not positive definite");

  // (Gamma^{-1} (x) G) vec(beta) = vec(M Gamma^{-1}), M = Psi'Y  =>  beta = G^{-1} M Gamma^{-1} Gamma.
  const Eigen::MatrixXd m = design.Psi.transpose() * panel.values;        // p x N
  const Eigen::MatrixXd rhs = gamma_llt.solve(m.transpose()).transpose();  // M Gamma^{-1}
  CoefficientBlock out(N, design.r, design.per_factor());
  out.data = gram.solve(rhs) * gamma_e;
  return out;
}

/// GLS with an arbitrary NT x NT Sigma_e (vec ordering: series-major).
/// Intended for small problems; it factors the full Sigma_e.
inline CoefficientBlock gls_step_general(const Panel& panel, const DesignBlock& design, const Eigen::MatrixXd& sigma_e) {
  const int N = panel.N();
  const int T = design.T;
  const int p = static_cast<int>(design.Psi.cols());
  require(panel.T() == T, ErrorKind::Shape, "panel and design have different T");
  require(sigma_e.rows() == static_cast<Eigen::Index>(N) * T && sigma_e.cols() == sigma_e.rows(),
          ErrorKind::Shape, "Sigma_e must be NT x NT");
  gram_factor(design);
  Eigen::LLT<Eigen::MatrixXd> sigma_llt(sigma_e);
  require(sigma_llt.info() == Eigen::Success, ErrorKind::Numeric, "Sigma_e is not positive definite");

  // W = Sigma^{-1} Theta, built block column by block column.
  Eigen::MatrixXd theta_blocks = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N) * T, static_cast<Eigen::Index>(N) * p);
  for (int m = 0; m < N; ++m) theta_blocks.block(m * T, m * p, T, p) = design.Psi;
  const Eigen::MatrixXd w = sigma_llt.solve(theta_blocks);
  Eigen::VectorXd y(static_cast<Eigen::Index>(N) * T);
  for (int m = 0; m < N; ++m) y.segment(m * T, T) = panel.values.col(m);
  const Eigen::MatrixXd lhs = theta_blocks.transpose() * w;
  const Eigen::VectorXd rhs = w.transpose() * y;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(lhs);
  require(ldlt.info() == Eigen::Success, ErrorKind::Numeric, "GLS normal equations are singular");
  const Eigen::VectorXd beta = ldlt.solve(rhs);
  CoefficientBlock out(N, design.r, design.per_factor());
  for (int m = 0; m < N; ++m) out.data.col(m) = beta.segment(m * p, p);
  return out;
}

inline LoadingField loadings_from_coeffs(const CoefficientBlock& beta, const wavelet::Basis& basis) {
  require(beta.n_basis == basis.n_columns(), ErrorKind::Shape,
          "coefficient block has " + std::to_string(beta.n_basis) + " basis columns, basis has " +
              std::to_string(basis.n_columns()));
  LoadingField field;
  field.by_factor.reserve(static_cast<std::size_t>(beta.r));
  for (int n = 0; n < beta.r; ++n) {
    field.by_factor.push_back(basis.B * beta.data.middleRows(n * beta.n_basis, beta.n_basis));
  }
  return field;
}

/// Xhat[t, m] = sum_n Lambda[t, m, n] F[t, n].
inline Eigen::MatrixXd common_component(const LoadingField& lambda, const factors::FactorEstimate& est) {
  require(lambda.T() == est.T() && lambda.r() == est.r(), ErrorKind::Shape,
          "loading field and factors disagree on T or r");
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(lambda.T(), lambda.N());
  for (int n = 0; n < lambda.r(); ++n) {
    x.array() += lambda.by_factor[static_cast<std::size_t>(n)].array().colwise() * est.F.col(n).array();
  }
  return x;
}

inline Eigen::MatrixXd residuals(const Panel& panel, const LoadingField& lambda, const factors::FactorEstimate& est) {
  require(panel.T() == lambda.T() && panel.N() == lambda.N(), ErrorKind::Shape,
          "panel and loading field disagree on shape");
  return panel.values - common_component(lambda, est);
}

/// (1/T) sum_t e_t e_t' with e_t = Y_t - Lambda(t) F_t.
inline Eigen::MatrixXd residual_cov(const Panel& panel, const LoadingField& lambda, const factors::FactorEstimate& est) {
  const Eigen::MatrixXd e = residuals(panel, lambda, est);
  Eigen::MatrixXd cov = (e.transpose() * e) / static_cast<double>(panel.T());
  return 0.5 * (cov + cov.transpose());
}

/// Shrinks a residual covariance toward its diagonal until it is positive
/// definite with condition number at most 1e8:
/// Gamma <- 0.9 Gamma + 0.1 diag(Gamma), applied repeatedly.
/// Non-positive diagonal entries are floored first (exact fits give Gamma = 0).
inline Eigen::MatrixXd regularize_covariance(const Eigen::MatrixXd& gamma, int T) {
  constexpr double kMaxCondition = 1e8;
  constexpr double kShrink = 0.1;
  const Eigen::Index N = gamma.rows();
  Eigen::MatrixXd g = 0.5 * (gamma + gamma.transpose());
  const double mean_diag = g.diagonal().mean();
  if (!(mean_diag > 0.0) || !std::isfinite(mean_diag)) return Eigen::MatrixXd::Identity(N, N);
  const double floor = 1e-12 * mean_diag;
  for (Eigen::Index i = 0; i < N; ++i) g(i, i) = std::max(g(i, i), floor);

  const Eigen::MatrixXd diag = g.diagonal().asDiagonal();
  bool force = T < N;
  for (int pass = 0; pass < 2000; ++pass) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(g, Eigen::EigenvaluesOnly);
    const double lo = es.eigenvalues()(0);
    const double hi = es.eigenvalues()(N - 1);
    const bool ok = lo > 0.0 && hi / lo <= kMaxCondition;
    if (ok && !force) return g;
    force = false;
    g = (1.0 - kShrink) * g + kShrink * diag;
  }
  return diag;
}

inline double field_distance(const LoadingField& a, const LoadingField& b, ConvergenceNorm norm) {
  double total = 0.0;
  for (int t = 0; t < a.T(); ++t) {
    double sq = 0.0;
    for (int n = 0; n < a.r(); ++n) {
      sq += (a.by_factor[static_cast<std::size_t>(n)].row(t) - b.by_factor[static_cast<std::size_t>(n)].row(t)).squaredNorm();
    }
    const double d = std::sqrt(sq);
    total = norm == ConvergenceNorm::SumOverT ? total + d : std::max(total, d);
  }
  return total;
}

/// Steps 2-5 of the two-stage estimator: GLS with Sigma_e = I, reconstruct
/// the loadings, re-estimate Gamma_e from residuals, repeat until the loading
/// field moves by less than delta. Non-convergence is reported, not thrown.
inline GlsFit fit_iterative(const Panel& panel, const factors::FactorEstimate& est, const wavelet::Basis& basis,
                            const FitOptions& opts = {}) {
  require(opts.delta > 0.0, ErrorKind::Parameter, "delta must be positive");
  require(opts.max_iter >= 1, ErrorKind::Parameter, "max_iter must be at least 1");
  require(panel.T() == basis.T, ErrorKind::Shape, "panel and basis have different T");
  const DesignBlock design = build_design(est, basis);
  const int N = panel.N();

  GlsFit fit;
  Eigen::MatrixXd gamma = Eigen::MatrixXd::Identity(N, N);
  LoadingField previous;
  for (int it = 1; it <= opts.max_iter; ++it) {
    fit.beta = gls_step(panel, design, gamma);
    fit.Lambda = loadings_from_coeffs(fit.beta, basis);
    fit.n_iter = it;
    if (it > 1) {
      const double d = field_distance(previous, fit.Lambda, opts.norm);
      fit.deltas.push_back(d);
      if (d < opts.delta) {
        fit.converged = true;
        break;
      }
    }
    if (it == opts.max_iter) break;
    gamma = regularize_covariance(residual_cov(panel, fit.Lambda, est), panel.T());
    previous = fit.Lambda;
  }
  fit.Gamma_e = residual_cov(panel, fit.Lambda, est);
  return fit;
}

}  // namespace tvload::gls
