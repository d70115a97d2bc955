#pragma once

// Alignment of estimated factors with reference factors and the two accuracy
// metrics: multivariate R^2 of the factors and the loading-path error.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "tvload/csv.hpp"
#include "tvload/error.hpp"
#include "tvload/gls.hpp"

namespace tvload::eval {

struct RotationResult {
  Eigen::MatrixXd A_star;              // l x l orthogonal, l = min(k, r)
  double trace_value = 0.0;            // tr[C A*] = sum of singular values of C
  Eigen::MatrixXd F_rotated_rescaled;  // T x l
};

inline double sample_sd(const Eigen::VectorXd& x) {
  const double mean = x.mean();
  return std::sqrt((x.array() - mean).square().sum() / static_cast<double>(x.size() - 1));
}

/// Column-pairwise Pearson correlations: C(i, j) = corr(a_i, b_j).
inline Eigen::MatrixXd cross_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  auto unit = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd z = m.rowwise() - m.colwise().mean();
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      const double norm = z.col(j).norm();
      require(norm > 0.0, ErrorKind::Numeric, "factor column " + std::to_string(j + 1) + " has zero variance");
      z.col(j) /= norm;
    }
    return z;
  };
  return unit(a).transpose() * unit(b);
}

/// Orthogonal A maximizing tr[corr(F_ref, F_est) A]: with C = U S V', A* = V U'.
/// The rotated estimate F_est A* is then rescaled column by column to the
/// sample sd of the matching reference column. When the column counts differ
/// only the first min(k, r) columns take part.
inline RotationResult procrustes_rotation(const Eigen::MatrixXd& f_ref, const Eigen::MatrixXd& f_est) {
  require(f_ref.rows() == f_est.rows(), ErrorKind::Shape, "reference and estimate have different T");
  const Eigen::Index l = std::min(f_ref.cols(), f_est.cols());
  require(l >= 1, ErrorKind::Shape, "no factor columns to rotate");
  const Eigen::MatrixXd ref = f_ref.leftCols(l);
  const Eigen::MatrixXd est = f_est.leftCols(l);
  {
    const Eigen::MatrixXd centered = est.rowwise() - est.colwise().mean();
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(centered);
    qr.setThreshold(1e-12);
    require(qr.rank() == l, ErrorKind::Numeric, "estimated factors are rank deficient");
  }

  const Eigen::MatrixXd c = cross_correlation(ref, est);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(c, Eigen::ComputeFullU | Eigen::ComputeFullV);
  RotationResult out;
  out.A_star = svd.matrixV() * svd.matrixU().transpose();
  out.trace_value = (c * out.A_star).trace();

  Eigen::MatrixXd rotated = est * out.A_star;
  for (Eigen::Index k = 0; k < l; ++k) {
    const double sd_est = sample_sd(rotated.col(k));
    require(sd_est > 0.0, ErrorKind::Numeric, "rotated factor has zero variance");
    rotated.col(k) *= sample_sd(ref.col(k)) / sd_est;
  }
  out.F_rotated_rescaled = std::move(rotated);
  return out;
}

/// tr[F' P F] / tr[F' F], P the projector onto span(F_est).
inline double r2_factors(const Eigen::MatrixXd& f_ref, const Eigen::MatrixXd& f_est) {
  require(f_ref.rows() == f_est.rows(), ErrorKind::Shape, "reference and estimate have different T");
  const Eigen::MatrixXd gram = f_est.transpose() * f_est;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  Eigen::JacobiSVD<Eigen::MatrixXd> sv(gram);
  const auto& s = sv.singularValues();
  require(ldlt.info() == Eigen::Success && s.size() > 0 && s(s.size() - 1) > 1e-14 * s(0), ErrorKind::Numeric,
          "F_est'F_est is singular");
  const Eigen::MatrixXd cross = f_est.transpose() * f_ref;  // k x r
  const double num = (cross.transpose() * ldlt.solve(cross)).trace();
  const double den = f_ref.squaredNorm();
  require(den > 0.0, ErrorKind::Numeric, "reference factors are identically zero");
  return num / den;
}

/// (NT)^{-1} sum_t |Lambda_hat(t) - Lambda(t)|_F, the norm taken unsquared.
inline double loading_mse(const gls::LoadingField& estimate, const gls::LoadingField& truth) {
  require(estimate.same_shape(truth), ErrorKind::Shape, "loading fields have different shapes");
  const int T = truth.T();
  const int N = truth.N();
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    double sq = 0.0;
    for (int n = 0; n < truth.r(); ++n) {
      sq += (estimate.by_factor[static_cast<std::size_t>(n)].row(t) - truth.by_factor[static_cast<std::size_t>(n)].row(t))
                .squaredNorm();
    }
    total += std::sqrt(sq);
  }
  return total / (static_cast<double>(N) * T);
}

/// Index of the median MSE: lower-middle order statistic for even counts,
/// lowest index among ties.
inline std::size_t median_index(const std::vector<double>& mse) {
  require(!mse.empty(), ErrorKind::Parameter, "median of an empty MSE list");
  std::vector<std::size_t> order(mse.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mse[a] < mse[b]; });
  const double target = mse[order[(mse.size() - 1) / 2]];
  for (std::size_t i = 0; i < mse.size(); ++i) {
    if (mse[i] == target) return i;
  }
  return order[(mse.size() - 1) / 2];
}

/// The fit whose MSE is the median across replications.
template <class Fit>
const Fit& median_path(const std::vector<double>& mse, const std::vector<Fit>& fits) {
  require(mse.size() == fits.size(), ErrorKind::Parameter, "MSE list and fit list differ in length");
  return fits[median_index(mse)];
}

struct MetricRow {
  int replication = 0;
  double r2 = 0.0;
  double mse = 0.0;
};

inline void write_metric_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << "replication,r2,mse\n";
  for (const auto& row : rows) os << row.replication << ',' << csv::fmt(row.r2) << ',' << csv::fmt(row.mse) << '\n';
}

}  // namespace tvload::eval
