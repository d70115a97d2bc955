#pragma once

// Common-factor extraction: principal components for stationary panels,
// generalized lag-covariance eigenvectors for I(d) panels, and selection of
// the number of factors.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "tvload/error.hpp"
#include "tvload/panel.hpp"

namespace tvload::factors {

struct Pca {
  friend bool operator==(const Pca&, const Pca&) = default;
};

/// Lag k, integration order d, extra normalization d' in {0, 1}.
struct GeneralizedCovariance {
  int k = 1;
  int d = 1;
  int dprime = 1;
  friend bool operator==(const GeneralizedCovariance&, const GeneralizedCovariance&) = default;
};

using Method = std::variant<Pca, GeneralizedCovariance>;

inline std::string method_name(const Method& m) {
  if (std::holds_alternative<Pca>(m)) return "PCA";
  const auto& g = std::get<GeneralizedCovariance>(m);
  return "GeneralizedCovariance(" + std::to_string(g.k) + "," + std::to_string(g.d) + "," +
         std::to_string(g.dprime) + ")";
}

/// Estimated factors. For PCA, F'F = T I_r. For the generalized-covariance
/// method F = Y * loading_vectors with orthonormal loading_vectors.
struct FactorEstimate {
  Eigen::MatrixXd F;                // T x r
  Eigen::VectorXd eigenvalues;      // r, descending
  Method method = Pca{};
  Eigen::MatrixXd loading_vectors;  // N x r; empty for PCA

  [[nodiscard]] int r() const noexcept { return static_cast<int>(F.cols()); }
  [[nodiscard]] int T() const noexcept { return static_cast<int>(F.rows()); }
};

/// Flips v so that its largest-magnitude entry is positive.
inline void fix_sign(Eigen::Ref<Eigen::VectorXd> v) {
  Eigen::Index idx = 0;
  v.cwiseAbs().maxCoeff(&idx);
  if (v(idx) < 0.0) v = -v;
}

namespace detail {

// Leading r eigenpairs of a symmetric matrix, by descending eigenvalue.
inline void leading_eigenpairs(const Eigen::MatrixXd& sym, int r, Eigen::VectorXd& values, Eigen::MatrixXd& vectors) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  require(es.info() == Eigen::Success, ErrorKind::Numeric, "symmetric eigensolver failed");
  const Eigen::Index n = sym.rows();
  values.resize(r);
  vectors.resize(n, r);
  for (int i = 0; i < r; ++i) {
    values(i) = es.eigenvalues()(n - 1 - i);
    vectors.col(i) = es.eigenvectors().col(n - 1 - i);
  }
}

inline Eigen::VectorXd all_eigenvalues_descending(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  require(es.info() == Eigen::Success, ErrorKind::Numeric, "symmetric eigensolver failed");
  return es.eigenvalues().reverse();
}

}  // namespace detail

/// Leading r eigenvalues of (NT)^{-1} Y Y', solved on the smaller side.
inline Eigen::VectorXd pca_spectrum(const Eigen::MatrixXd& y) {
  const double scale = 1.0 / (static_cast<double>(y.rows()) * static_cast<double>(y.cols()));
  if (y.cols() < y.rows()) return detail::all_eigenvalues_descending(scale * (y.transpose() * y));
  return detail::all_eigenvalues_descending(scale * (y * y.transpose()));
}

/// F = sqrt(T) [v_1 .. v_r], v_i the leading eigenvectors of (NT)^{-1} Y Y'.
inline FactorEstimate pca_factors(const Panel& panel, int r) {
  const int T = panel.T();
  const int N = panel.N();
  require(r >= 1 && r <= std::min(N, T), ErrorKind::Parameter,
          "number of factors r=" + std::to_string(r) + " must lie in [1, min(N,T)=" +
              std::to_string(std::min(N, T)) + "]");
  const Eigen::MatrixXd& y = panel.values;
  const double scale = 1.0 / (static_cast<double>(N) * T);

  FactorEstimate est;
  est.method = Pca{};
  Eigen::MatrixXd v(T, r);
  bool mapped = false;
  if (N < T) {
    // N x N dual problem; eigenvectors map across via Y w / |Y w|.
    Eigen::MatrixXd w;
    detail::leading_eigenpairs(scale * (y.transpose() * y), r, est.eigenvalues, w);
    const double top = std::max(est.eigenvalues(0), std::numeric_limits<double>::min());
    mapped = est.eigenvalues(r - 1) > 1e-12 * top;
    if (mapped) {
      for (int i = 0; i < r; ++i) {
        Eigen::VectorXd yw = y * w.col(i);
        v.col(i) = yw / yw.norm();
      }
    }
  }
  if (!mapped) detail::leading_eigenpairs(scale * (y * y.transpose()), r, est.eigenvalues, v);
  for (int i = 0; i < r; ++i) fix_sign(v.col(i));
  est.eigenvalues = est.eigenvalues.cwiseMax(0.0);
  est.F = std::sqrt(static_cast<double>(T)) * v;
  return est;
}

/// C_y(k) = T^{-(2d+d')} sum_{t=k+1}^T (Y_{t-k} - Ybar)(Y_t - Ybar)',
/// returned symmetrized as (C + C')/2.
inline Eigen::MatrixXd generalized_covariance(const Panel& panel, int k, int d, int dprime) {
  const int T = panel.T();
  require(k >= 0 && k < T, ErrorKind::Parameter,
          "lag k=" + std::to_string(k) + " must lie in [0, T=" + std::to_string(T) + ")");
  require(d >= 0, ErrorKind::Parameter, "integration order d must be non-negative");
  require(dprime == 0 || dprime == 1, ErrorKind::Parameter, "d' must be 0 or 1");
  const Eigen::RowVectorXd mean = panel.values.colwise().mean();
  const Eigen::MatrixXd dev = panel.values.rowwise() - mean;
  const int n = T - k;
  Eigen::MatrixXd c = dev.topRows(n).transpose() * dev.bottomRows(n);
  c /= std::pow(static_cast<double>(T), 2.0 * d + dprime);
  return 0.5 * (c + c.transpose());
}

/// F = Y * L, L the r leading orthonormal eigenvectors of the symmetrized C_y(k).
inline FactorEstimate nonstationary_factors(const Panel& panel, int r, int k = 1, int d = 1, int dprime = 1) {
  require(r >= 1 && r <= panel.N(), ErrorKind::Parameter,
          "number of factors r=" + std::to_string(r) + " must lie in [1, N=" + std::to_string(panel.N()) + "]");
  const Eigen::MatrixXd c = generalized_covariance(panel, k, d, dprime);
  FactorEstimate est;
  est.method = GeneralizedCovariance{k, d, dprime};
  detail::leading_eigenpairs(c, r, est.eigenvalues, est.loading_vectors);
  for (int i = 0; i < r; ++i) fix_sign(est.loading_vectors.col(i));
  est.F = panel.values * est.loading_vectors;
  return est;
}

inline FactorEstimate extract(const Panel& panel, int r, const Method& method) {
  if (const auto* g = std::get_if<GeneralizedCovariance>(&method)) {
    return nonstationary_factors(panel, r, g->k, g->d, g->dprime);
  }
  return pca_factors(panel, r);
}

// ---------------------------------------------------------------------------
// Number of factors: Bai-Ng IC with a multiplicative penalty constant c swept
// over a grid and evaluated on nested subsamples; the answer is the r that
// stays constant, with zero spread across subsamples, over the widest run of c.

inline std::vector<double> default_c_grid() {
  std::vector<double> grid;
  for (int i = 1; i <= 150; ++i) grid.push_back(0.02 * i);
  return grid;
}

struct SelectionOptions {
  int r_max = 8;
  std::vector<double> c_grid = default_c_grid();
  int n_subsamples = 10;
  bool first_difference = false;
};

struct StabilityInterval {
  double c_lo = 0.0;
  double c_hi = 0.0;
  int r = 0;
  int n_points = 0;
};

struct Subsample {
  int N = 0;
  int T = 0;
};

struct FactorSelection {
  int r = 0;
  std::vector<double> c_grid;
  std::vector<Subsample> subsamples;
  std::vector<std::vector<double>> ic;          // full sample, [c][r], r = 0..r_max
  std::vector<std::vector<int>> r_by_subsample;  // [c][subsample]
  std::vector<bool> stable;                      // [c]
  std::vector<StabilityInterval> intervals;
  int widest_interval = -1;  // index into intervals, -1 if none was stable
};

namespace detail {

// V(r) for r = 0..r_max: mean squared residual after r principal components.
inline std::vector<double> residual_variances(const Eigen::MatrixXd& y, int r_max) {
  const Eigen::VectorXd ev = pca_spectrum(y).cwiseMax(0.0);
  std::vector<double> v(static_cast<std::size_t>(r_max) + 1, 0.0);
  // Sum the tail from the smallest eigenvalue upward to limit cancellation.
  for (int r = 0; r <= r_max; ++r) {
    double tail = 0.0;
    for (Eigen::Index i = ev.size() - 1; i >= r; --i) tail += ev(i);
    v[static_cast<std::size_t>(r)] = tail;
  }
  // Exact low-rank panels leave round-off residuals; floor them relative to V(0).
  const double floor = std::max(1e-12 * v[0], std::numeric_limits<double>::min());
  for (auto& x : v) x = std::max(x, floor);
  return v;
}

inline double ic_penalty(int N, int T) {
  const double n = N;
  const double t = T;
  return ((n + t) / (n * t)) * std::log(std::min(n, t));
}

}  // namespace detail

inline FactorSelection select_num_factors(const Panel& input, const SelectionOptions& opts) {
  require(!opts.c_grid.empty(), ErrorKind::Parameter, "penalty grid c_grid is empty");
  Panel panel = opts.first_difference ? standardize(first_difference(input)) : input;
  const int N = panel.N();
  const int T = panel.T();
  require(opts.r_max >= 1 && opts.r_max < std::min(N, T), ErrorKind::Parameter,
          "r_max=" + std::to_string(opts.r_max) + " must lie in [1, min(N,T)=" + std::to_string(std::min(N, T)) + ")");
  require(opts.n_subsamples >= 1, ErrorKind::Parameter, "n_subsamples must be at least 1");

  FactorSelection sel;
  sel.c_grid = opts.c_grid;
  for (double c : sel.c_grid) require(c > 0.0, ErrorKind::Parameter, "penalty constants must be positive");

  const int n_sub = opts.n_subsamples;
  std::vector<std::vector<double>> variances;
  std::vector<int> r_caps;
  for (int j = 0; j < n_sub; ++j) {
    Subsample s{N - (j * N) / (2 * n_sub), T - (j * T) / (2 * n_sub)};
    sel.subsamples.push_back(s);
    const int cap = std::min(opts.r_max, std::min(s.N, s.T) - 1);
    r_caps.push_back(cap);
    variances.push_back(detail::residual_variances(panel.values.topLeftCorner(s.T, s.N), cap));
  }

  const std::size_t n_c = sel.c_grid.size();
  sel.ic.assign(n_c, {});
  sel.r_by_subsample.assign(n_c, std::vector<int>(static_cast<std::size_t>(n_sub), 0));
  sel.stable.assign(n_c, false);
  for (std::size_t ci = 0; ci < n_c; ++ci) {
    const double c = sel.c_grid[ci];
    for (int j = 0; j < n_sub; ++j) {
      const auto& s = sel.subsamples[static_cast<std::size_t>(j)];
      const auto& v = variances[static_cast<std::size_t>(j)];
      const double pen = detail::ic_penalty(s.N, s.T);
      int best_r = 0;
      double best_ic = std::numeric_limits<double>::infinity();
      for (int r = 0; r <= r_caps[static_cast<std::size_t>(j)]; ++r) {
        const double ic = std::log(v[static_cast<std::size_t>(r)]) + c * r * pen;
        if (j == 0) sel.ic[ci].push_back(ic);
        if (ic < best_ic) {
          best_ic = ic;
          best_r = r;
        }
      }
      sel.r_by_subsample[ci][static_cast<std::size_t>(j)] = best_r;
    }
    const auto& rs = sel.r_by_subsample[ci];
    sel.stable[ci] = std::all_of(rs.begin(), rs.end(), [&](int r) { return r == rs.front(); });
  }

  for (std::size_t ci = 0; ci < n_c;) {
    if (!sel.stable[ci]) {
      ++ci;
      continue;
    }
    const int r = sel.r_by_subsample[ci][0];
    std::size_t end = ci;
    while (end + 1 < n_c && sel.stable[end + 1] && sel.r_by_subsample[end + 1][0] == r) ++end;
    sel.intervals.push_back({sel.c_grid[ci], sel.c_grid[end], r, static_cast<int>(end - ci + 1)});
    ci = end + 1;
  }

  if (!sel.intervals.empty()) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(sel.intervals.size()); ++i) {
      if (sel.intervals[static_cast<std::size_t>(i)].n_points > sel.intervals[static_cast<std::size_t>(best)].n_points) best = i;
    }
    sel.widest_interval = best;
    sel.r = sel.intervals[static_cast<std::size_t>(best)].r;
  } else {
    // No stable c: fall back to the most frequent full-sample choice.
    std::vector<int> counts(static_cast<std::size_t>(opts.r_max) + 1, 0);
    for (std::size_t ci = 0; ci < n_c; ++ci) ++counts[static_cast<std::size_t>(sel.r_by_subsample[ci][0])];
    sel.r = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  }
  return sel;
}

}  // namespace tvload::factors
