#pragma once

// Orthonormal wavelet systems on [0,1]: Haar and periodized Daubechies-8.
//
// A basis at resolution J has 2^J functions: the scaling function phi_00
// followed by psi_jk for j = 0..J-1, k = 0..2^j-1. Evaluation happens on the
// rescaled grid u = t/T, t = 1..T.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tvload/error.hpp"

namespace tvload::wavelet {

enum class Family { Haar, Daubechies8 };

inline std::string family_name(Family f) {
  return f == Family::Haar ? "haar" : "d8";
}

inline Family parse_family(const std::string& name) {
  if (name == "haar" || name == "Haar") return Family::Haar;
  if (name == "d8" || name == "D8" || name == "daubechies8" || name == "Daubechies8") {
    return Family::Daubechies8;
  }
  fail(ErrorKind::Parameter, "unknown wavelet family '" + name + "' (expected haar or d8)");
}

/// Extremal-phase 8-tap Daubechies lowpass filter, normalized to sum sqrt(2).
inline constexpr std::array<double, 8> kD8Filter = {
    0.2303778133088965,  0.7148465705529157,  0.6308807679298589,
    -0.0279837694168599, -0.1870348117190931, 0.0308413818355607,
    0.0328830116668852,  -0.0105974017850690,
};

/// Support of the D8 scaling function and wavelet is [0, 7].
inline constexpr int kD8Support = 7;

inline constexpr int kDefaultCascadeLevels = 12;

/// Column of a basis: either the scaling function or psi_{j,k}.
struct ColumnId {
  bool scaling = true;
  int j = 0;
  int k = 0;

  friend bool operator==(const ColumnId&, const ColumnId&) = default;
};

/// Columns in basis order: [phi, (0,0), (1,0), (1,1), ..., (J-1, 2^(J-1)-1)].
inline std::vector<ColumnId> column_index(int J) {
  std::vector<ColumnId> cols;
  cols.reserve(std::size_t{1} << J);
  cols.push_back({true, 0, 0});
  for (int j = 0; j < J; ++j) {
    for (int k = 0; k < (1 << j); ++k) cols.push_back({false, j, k});
  }
  return cols;
}

/// Smallest J with 2^(J-1) <= sqrt(T) <= 2^J.
inline int select_resolution(long long T) {
  require(T >= 4, ErrorKind::InvalidGrid,
          "grid length T=" + std::to_string(T) + " is below the minimum of 4");
  // 2^J >= sqrt(T)  <=>  4^J >= T; the lower bound then holds automatically.
  int J = 0;
  while ((1LL << (2 * J)) < T) ++J;
  return J;
}

/// Haar psi_{jk}(u) = 2^{j/2} psi(2^j u - k). The mother wavelet is +1 on
/// (0, 1/2] and -1 on (1/2, 1]; at u = 0 the right limit is taken so the
/// whole closed interval [0,1] is covered.
inline double haar_eval(int j, int k, double u) {
  require(j >= 0 && j < 62, ErrorKind::Index, "Haar level j=" + std::to_string(j) + " out of range");
  require(k >= 0 && k < (1LL << j), ErrorKind::Index,
          "Haar shift k=" + std::to_string(k) + " outside I_" + std::to_string(j));
  require(u >= 0.0 && u <= 1.0, ErrorKind::Parameter, "Haar evaluation point outside [0,1]");
  const double scale = std::pow(2.0, 0.5 * j);
  const double x = std::ldexp(u, j) - k;
  if (u == 0.0) return k == 0 ? scale : 0.0;
  if (x > 0.0 && x <= 0.5) return scale;
  if (x > 0.5 && x <= 1.0) return -scale;
  return 0.0;
}

/// Tabulated D8 scaling function on the dyadic grid m / 2^levels, 0 <= m <= 7*2^levels.
class ScalingTable {
 public:
  ScalingTable(int levels, std::vector<double> phi, std::vector<double> psi)
      : levels_(levels), phi_(std::move(phi)), psi_(std::move(psi)) {}

  [[nodiscard]] int levels() const noexcept { return levels_; }
  [[nodiscard]] long long points_per_unit() const noexcept { return 1LL << levels_; }
  [[nodiscard]] const std::vector<double>& phi_values() const noexcept { return phi_; }
  [[nodiscard]] const std::vector<double>& psi_values() const noexcept { return psi_; }

  /// phi(m / 2^levels); zero outside the support.
  [[nodiscard]] double phi_at(long long m) const noexcept {
    return (m < 0 || m >= static_cast<long long>(phi_.size())) ? 0.0 : phi_[static_cast<std::size_t>(m)];
  }
  [[nodiscard]] double psi_at(long long m) const noexcept {
    return (m < 0 || m >= static_cast<long long>(psi_.size())) ? 0.0 : psi_[static_cast<std::size_t>(m)];
  }

  [[nodiscard]] double phi(double x) const noexcept { return interpolate(phi_, x); }
  [[nodiscard]] double psi(double x) const noexcept { return interpolate(psi_, x); }

 private:
  [[nodiscard]] double interpolate(const std::vector<double>& table, double x) const noexcept {
    if (!(x > 0.0) || !(x < kD8Support)) return 0.0;
    const double pos = std::ldexp(x, levels_);
    const auto lo = static_cast<std::size_t>(pos);
    const double frac = pos - static_cast<double>(lo);
    if (lo + 1 >= table.size()) return table.back();
    return table[lo] + frac * (table[lo + 1] - table[lo]);
  }

  int levels_;
  std::vector<double> phi_;
  std::vector<double> psi_;
};

/// Cascade algorithm: phi at the integers from the refinement-matrix
/// eigenvector for eigenvalue 1, then dyadic refinement through
/// phi(x) = sqrt(2) sum_n h_n phi(2x - n). psi is tabulated on the same grid
/// from psi(x) = sqrt(2) sum_n g_n phi(2x - n), g_n = (-1)^n h_{7-n}.
inline ScalingTable daubechies8_table(int levels = kDefaultCascadeLevels) {
  require(levels >= 1 && levels <= 20, ErrorKind::Parameter,
          "cascade depth must lie in [1, 20]");
  const double sqrt2 = std::sqrt(2.0);
  const auto& h = kD8Filter;

  // Interior integer values phi(1..6); phi(0) = phi(7) = 0.
  constexpr int kInterior = kD8Support - 1;
  Eigen::MatrixXd refine(kInterior, kInterior);
  for (int i = 1; i <= kInterior; ++i) {
    for (int j = 1; j <= kInterior; ++j) {
      const int n = 2 * i - j;
      refine(i - 1, j - 1) = (n >= 0 && n < 8) ? sqrt2 * h[static_cast<std::size_t>(n)] : 0.0;
    }
  }
  Eigen::EigenSolver<Eigen::MatrixXd> es(refine);
  require(es.info() == Eigen::Success, ErrorKind::Numeric, "refinement eigenproblem failed");
  Eigen::Index best = -1;
  double best_gap = 1e300;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double gap = std::abs(es.eigenvalues()(i) - std::complex<double>(1.0, 0.0));
    if (gap < best_gap) {
      best_gap = gap;
      best = i;
    }
  }
  require(best >= 0 && best_gap < 1e-8, ErrorKind::Numeric,
          "refinement matrix has no eigenvalue 1 (non-convergent cascade)");
  Eigen::VectorXd integer_values = es.eigenvectors().col(best).real();
  integer_values /= integer_values.sum();

  const long long per_unit = 1LL << levels;
  const long long n_points = kD8Support * per_unit + 1;
  std::vector<double> phi(static_cast<std::size_t>(n_points), 0.0);
  for (int i = 1; i <= kInterior; ++i) phi[static_cast<std::size_t>(i * per_unit)] = integer_values(i - 1);

  auto phi_at = [&](long long m) {
    return (m < 0 || m >= n_points) ? 0.0 : phi[static_cast<std::size_t>(m)];
  };
  for (int level = 1; level <= levels; ++level) {
    const long long stride = 1LL << (levels - level);
    for (long long m = stride; m < n_points; m += 2 * stride) {
      double acc = 0.0;
      for (int n = 0; n < 8; ++n) acc += h[static_cast<std::size_t>(n)] * phi_at(2 * m - n * per_unit);
      phi[static_cast<std::size_t>(m)] = sqrt2 * acc;
    }
  }

  std::vector<double> psi(static_cast<std::size_t>(n_points), 0.0);
  for (long long m = 0; m < n_points; ++m) {
    double acc = 0.0;
    for (int n = 0; n < 8; ++n) {
      const double g = ((n % 2 == 0) ? 1.0 : -1.0) * h[static_cast<std::size_t>(7 - n)];
      acc += g * phi_at(2 * m - n * per_unit);
    }
    psi[static_cast<std::size_t>(m)] = sqrt2 * acc;
  }
  return ScalingTable(levels, std::move(phi), std::move(psi));
}

/// Shared default-depth table; built once, immutable afterwards.
inline const ScalingTable& default_d8_table() {
  static const ScalingTable table = daubechies8_table(kDefaultCascadeLevels);
  return table;
}

/// 2^{j/2} sum_l f(2^j (u + l) - k) over all integer l, for f supported on [0, 7].
template <class F>
double periodize(const F& f, int j, int k, double u) {
  const double period = std::ldexp(1.0, j);
  double x = std::ldexp(u, j) - k;
  // Bring x to the smallest value >= 0 in its residue class, then walk the support.
  x -= period * std::floor(x / period);
  double acc = 0.0;
  for (; x < kD8Support; x += period) acc += f(x);
  return std::pow(2.0, 0.5 * j) * acc;
}

/// Evaluation matrix of a wavelet family on the grid u = t/T.
struct Basis {
  Family family = Family::Haar;
  int J = 0;
  int T = 0;
  Eigen::MatrixXd B;  // T x 2^J
  std::vector<ColumnId> columns;

  [[nodiscard]] int n_columns() const noexcept { return static_cast<int>(columns.size()); }
};

namespace detail {

// Integer version of haar_eval at u = t/T, exact on any grid.
inline double haar_on_grid(int j, int k, long long t, long long T) {
  const long long scaled = t << (j + 1);  // 2 * 2^j * t
  const long long lo = 2LL * k * T;
  const long long mid = (2LL * k + 1) * T;
  const long long hi = (2LL * k + 2) * T;
  const double scale = std::pow(2.0, 0.5 * j);
  if (scaled > lo && scaled <= mid) return scale;
  if (scaled > mid && scaled <= hi) return -scale;
  return 0.0;
}

}  // namespace detail

inline Basis evaluate_basis(Family family, int J, int T) {
  require(J >= 0 && J <= 20, ErrorKind::Parameter, "resolution J must lie in [0, 20]");
  require(T >= 1, ErrorKind::InvalidGrid, "grid length must be positive");
  Basis basis;
  basis.family = family;
  basis.J = J;
  basis.T = T;
  basis.columns = column_index(J);
  basis.B.resize(T, basis.n_columns());

  if (family == Family::Haar) {
    for (int t = 1; t <= T; ++t) {
      basis.B(t - 1, 0) = 1.0;
      for (int c = 1; c < basis.n_columns(); ++c) {
        const auto& col = basis.columns[static_cast<std::size_t>(c)];
        basis.B(t - 1, c) = detail::haar_on_grid(col.j, col.k, t, T);
      }
    }
    return basis;
  }

  const ScalingTable& table = default_d8_table();
  auto phi = [&](double x) { return table.phi(x); };
  auto psi = [&](double x) { return table.psi(x); };
  for (int t = 1; t <= T; ++t) {
    const double u = static_cast<double>(t) / T;
    basis.B(t - 1, 0) = periodize(phi, 0, 0, u);
    for (int c = 1; c < basis.n_columns(); ++c) {
      const auto& col = basis.columns[static_cast<std::size_t>(c)];
      basis.B(t - 1, c) = periodize(psi, col.j, col.k, u);
    }
  }
  return basis;
}

/// alpha_00 and the detail coefficients beta_jk of one loading function.
struct CoefficientVector {
  double alpha00 = 0.0;
  std::map<std::pair<int, int>, double> beta;

  [[nodiscard]] Eigen::VectorXd flatten(int J) const {
    const auto cols = column_index(J);
    Eigen::VectorXd v(static_cast<Eigen::Index>(cols.size()));
    v(0) = alpha00;
    for (std::size_t c = 1; c < cols.size(); ++c) {
      auto it = beta.find({cols[c].j, cols[c].k});
      v(static_cast<Eigen::Index>(c)) = it == beta.end() ? 0.0 : it->second;
    }
    return v;
  }

  static CoefficientVector from_flat(const Eigen::VectorXd& v) {
    CoefficientVector out;
    const auto size = v.size();
    require(size >= 1 && (size & (size - 1)) == 0, ErrorKind::Shape,
            "coefficient vector length must be a power of two");
    int J = 0;
    while ((Eigen::Index{1} << J) < size) ++J;
    const auto cols = column_index(J);
    out.alpha00 = v(0);
    for (std::size_t c = 1; c < cols.size(); ++c) {
      out.beta[{cols[c].j, cols[c].k}] = v(static_cast<Eigen::Index>(c));
    }
    return out;
  }
};

/// B * coeffs, one value per grid point.
inline Eigen::VectorXd reconstruct(const Eigen::VectorXd& flat_coeffs, const Basis& basis) {
  require(flat_coeffs.size() == basis.B.cols(), ErrorKind::Shape,
          "coefficient length " + std::to_string(flat_coeffs.size()) + " does not match " +
              std::to_string(basis.B.cols()) + " basis columns");
  return basis.B * flat_coeffs;
}

inline Eigen::VectorXd reconstruct(const CoefficientVector& coeffs, const Basis& basis) {
  for (const auto& [jk, value] : coeffs.beta) {
    require(jk.first >= 0 && jk.first < basis.J && jk.second >= 0 && jk.second < (1 << jk.first),
            ErrorKind::Shape, "coefficient (j,k) outside the basis resolution");
  }
  return reconstruct(coeffs.flatten(basis.J), basis);
}

inline std::string column_name(const ColumnId& col) {
  if (col.scaling) return "phi";
  return "psi_" + std::to_string(col.j) + "_" + std::to_string(col.k);
}

/// CSV dump: header t,u,phi,psi_0_0,... and one row per grid point.
inline void write_basis_csv(std::ostream& os, const Basis& basis) {
  os << "t,u";
  for (const auto& col : basis.columns) os << ',' << column_name(col);
  os << '\n';
  const auto old_precision = os.precision(17);
  for (int t = 1; t <= basis.T; ++t) {
    os << t << ',' << static_cast<double>(t) / basis.T;
    for (Eigen::Index c = 0; c < basis.B.cols(); ++c) os << ',' << basis.B(t - 1, c);
    os << '\n';
  }
  os.precision(old_precision);
}

}  // namespace tvload::wavelet
