#pragma once

// Residual bootstrap bands for the loading curves. Whole residual vectors
// e_t are resampled over t, so cross-sectional dependence is kept; the
// factors stay fixed unless re-extraction is requested.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "tvload/csv.hpp"
#include "tvload/error.hpp"
#include "tvload/eval.hpp"
#include "tvload/factors.hpp"
#include "tvload/gls.hpp"
#include "tvload/panel.hpp"
#include "tvload/parallel.hpp"
#include "tvload/rng.hpp"
#include "tvload/wavelet.hpp"

namespace tvload::bootstrap {

struct BootstrapOptions {
  int threads = 1;
  gls::FitOptions fit;
  /// Re-extract factors on every synthetic panel and align them to the
  /// original estimate before refitting.
  bool reextract = false;
};

/// Coefficients of every successful draw; bands at several levels can be
/// read off the same draws.
struct BootstrapDraws {
  int B = 0;
  std::vector<gls::CoefficientBlock> coefficients;
  std::vector<int> failed;  // draw indices that threw
  std::string first_error;
};

struct BandSet {
  double level = 0.95;
  int B = 0;
  int n_failed = 0;
  gls::LoadingField lower;
  gls::LoadingField point;
  gls::LoadingField upper;
};

inline constexpr double kMaxFailedShare = 0.10;

/// Empirical quantile with linear interpolation between order statistics
/// (h = (n - 1) p). `sorted` must be ascending.
inline double quantile_sorted(const std::vector<double>& sorted, double p) {
  require(!sorted.empty(), ErrorKind::Parameter, "quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline BootstrapDraws draw(const Panel& panel, const gls::GlsFit& fit, const factors::FactorEstimate& est,
                           const wavelet::Basis& basis, int B, std::uint64_t seed, const BootstrapOptions& opts = {}) {
  require(B >= 2, ErrorKind::Parameter, "bootstrap needs B >= 2");
  require(panel.T() == est.T() && panel.T() == basis.T, ErrorKind::Shape, "panel, factors and basis disagree on T");
  require(fit.Lambda.T() == panel.T() && fit.Lambda.N() == panel.N() && fit.Lambda.r() == est.r(), ErrorKind::Shape,
          "fit does not match the panel");
  const int T = panel.T();
  const Eigen::MatrixXd common = gls::common_component(fit.Lambda, est);
  const Eigen::MatrixXd resid = panel.values - common;

  std::vector<gls::CoefficientBlock> slots(static_cast<std::size_t>(B));
  std::vector<std::string> errors(static_cast<std::size_t>(B));
  std::vector<char> ok(static_cast<std::size_t>(B), 0);

  parallel_for(B, opts.threads, [&](int b) {
    auto rng = make_rng(seed, static_cast<std::uint64_t>(b));
    std::uniform_int_distribution<int> pick(0, T - 1);
    Eigen::MatrixXd y = common;
    for (int t = 0; t < T; ++t) y.row(t) += resid.row(pick(rng));
    try {
      Panel synthetic = Panel::from_matrix(std::move(y));
      synthetic.series_ids = panel.series_ids;
      factors::FactorEstimate f = est;
      if (opts.reextract) {
        const factors::FactorEstimate fresh = factors::extract(standardize(synthetic), est.r(), est.method);
        f.F = eval::procrustes_rotation(est.F, fresh.F).F_rotated_rescaled;
      }
      slots[static_cast<std::size_t>(b)] = gls::fit_iterative(synthetic, f, basis, opts.fit).beta;
      ok[static_cast<std::size_t>(b)] = 1;
    } catch (const std::exception& ex) {
      errors[static_cast<std::size_t>(b)] = ex.what();
    }
  });

  BootstrapDraws out;
  out.B = B;
  for (int b = 0; b < B; ++b) {
    if (ok[static_cast<std::size_t>(b)]) {
      out.coefficients.push_back(std::move(slots[static_cast<std::size_t>(b)]));
    } else {
      if (out.failed.empty()) out.first_error = errors[static_cast<std::size_t>(b)];
      out.failed.push_back(b);
    }
  }
  if (static_cast<double>(out.failed.size()) > kMaxFailedShare * B || out.coefficients.size() < 2) {
    fail(ErrorKind::Numeric, std::to_string(out.failed.size()) + " of " + std::to_string(B) +
                                 " bootstrap draws failed (first error: " + out.first_error + ")");
  }
  return out;
}

/// Pointwise (1 - level)/2 and (1 + level)/2 quantiles of the drawn curves.
inline BandSet bands(const BootstrapDraws& draws, const gls::GlsFit& fit, const wavelet::Basis& basis, double level) {
  require(level > 0.0 && level < 1.0, ErrorKind::Parameter, "level must lie in (0, 1)");
  require(draws.coefficients.size() >= 2, ErrorKind::Parameter, "bands need at least two successful draws");
  const int T = fit.Lambda.T();
  const int N = fit.Lambda.N();
  const int r = fit.Lambda.r();
  const auto D = static_cast<Eigen::Index>(draws.coefficients.size());
  const double p_lo = 0.5 * (1.0 - level);
  const double p_hi = 0.5 * (1.0 + level);

  BandSet out;
  out.level = level;
  out.B = draws.B;
  out.n_failed = static_cast<int>(draws.failed.size());
  out.point = fit.Lambda;
  out.lower = gls::LoadingField(T, N, r);
  out.upper = gls::LoadingField(T, N, r);

  Eigen::MatrixXd coeffs(basis.n_columns(), D);
  std::vector<double> values(static_cast<std::size_t>(D));
  for (int m = 0; m < N; ++m) {
    for (int n = 0; n < r; ++n) {
      for (Eigen::Index d = 0; d < D; ++d) coeffs.col(d) = draws.coefficients[static_cast<std::size_t>(d)].coefficients(m, n);
      const Eigen::MatrixXd curves = basis.B * coeffs;  // T x D
      for (int t = 0; t < T; ++t) {
        for (Eigen::Index d = 0; d < D; ++d) values[static_cast<std::size_t>(d)] = curves(t, d);
        std::sort(values.begin(), values.end());
        out.lower(t, m, n) = quantile_sorted(values, p_lo);
        out.upper(t, m, n) = quantile_sorted(values, p_hi);
      }
    }
  }
  return out;
}

inline BandSet residual_bootstrap(const Panel& panel, const gls::GlsFit& fit, const factors::FactorEstimate& est,
                                  const wavelet::Basis& basis, int B, double level, std::uint64_t seed,
                                  const BootstrapOptions& opts = {}) {
  require(level > 0.0 && level < 1.0, ErrorKind::Parameter, "level must lie in (0, 1)");
  return bands(draw(panel, fit, est, basis, B, seed, opts), fit, basis, level);
}

/// Long format: t,series,factor,lower,point,upper,level (t and factor 1-based).
inline void write_bands_csv(std::ostream& os, const BandSet& set, const std::vector<std::string>& series_ids) {
  os << "t,series,factor,lower,point,upper,level\n";
  for (int t = 0; t < set.point.T(); ++t) {
    for (int m = 0; m < set.point.N(); ++m) {
      for (int n = 0; n < set.point.r(); ++n) {
        os << t + 1 << ',' << series_ids.at(static_cast<std::size_t>(m)) << ',' << n + 1 << ','
           << csv::fmt(set.lower(t, m, n)) << ',' << csv::fmt(set.point(t, m, n)) << ',' << csv::fmt(set.upper(t, m, n))
           << ',' << csv::fmt(set.level) << '\n';
      }
    }
  }
}

/// One curve: t,point,lower,upper.
inline void write_curve_csv(std::ostream& os, const BandSet& set, int series, int factor) {
  os << "t,point,lower,upper\n";
  for (int t = 0; t < set.point.T(); ++t) {
    os << t + 1 << ',' << csv::fmt(set.point(t, series, factor)) << ',' << csv::fmt(set.lower(t, series, factor)) << ','
       << csv::fmt(set.upper(t, series, factor)) << '\n';
  }
}

}  // namespace tvload::bootstrap
