#pragma once

// Data-generating process with smooth time-varying loadings and the Monte
// Carlo harness that evaluates the two-stage estimator cell by cell.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <utility>
#include <variant>
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

namespace tvload::sim {

// ---------------------------------------------------------------------------
// Idiosyncratic covariance

struct Toeplitz {
  double gamma = 0.7;
};

struct DiagonalUniform {
  double lo = 0.5;
  double hi = 1.5;
};

using NoiseCov = std::variant<Toeplitz, DiagonalUniform>;

inline std::string noise_cov_label(const NoiseCov& spec) {
  return std::holds_alternative<Toeplitz>(spec) ? "Toep" : "Diag";
}

inline Eigen::MatrixXd gen_noise_cov(const NoiseCov& spec, int N, std::uint64_t seed) {
  require(N >= 1, ErrorKind::Parameter, "N must be positive");
  if (const auto* toep = std::get_if<Toeplitz>(&spec)) {
    require(std::abs(toep->gamma) < 1.0, ErrorKind::Parameter,
            "Toeplitz gamma must satisfy |gamma| < 1");
    Eigen::MatrixXd g(N, N);
    for (int i = 0; i < N; ++i) {
      for (int j = 0; j < N; ++j) g(i, j) = std::pow(toep->gamma, std::abs(i - j));
    }
    return g;
  }
  const auto& diag = std::get<DiagonalUniform>(spec);
  require(diag.lo < diag.hi, ErrorKind::Parameter, "DiagonalUniform needs lo < hi");
  auto rng = make_rng(seed, 0x6e6f697365ULL);
  std::uniform_real_distribution<double> unif(diag.lo, diag.hi);
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(N, N);
  for (int i = 0; i < N; ++i) g(i, i) = unif(rng);
  return g;
}

// ---------------------------------------------------------------------------
// Loading functions of rescaled time u in [0, 1]. Every entry accepts an
// additive `level`; the remaining parameters depend on the shape:
//   cosine           level + a cos(omega u)
//   sine             level + a sin(omega u)
//   sqrt_trend       level + scale (a sqrt(u) - b sin(omega u))
//   linear_trend     level + a u
//   exp_trend        level + a exp(b u)
//   log_trend        level + a log(1 + b u)
//   sine_cosine_mix  level + a sin(omega u) + b cos(omega2 u)
//   constant         level

struct LoadingFunction {
  std::string name = "constant";
  std::map<std::string, double> params;

  [[nodiscard]] double param(const std::string& key, double fallback) const {
    auto it = params.find(key);
    return it == params.end() ? fallback : it->second;
  }

  [[nodiscard]] double operator()(double u) const {
    constexpr double pi = std::numbers::pi;
    const double level = param("level", 0.0);
    if (name == "cosine") return level + param("a", 0.4) * std::cos(param("omega", 3.0 * pi) * u);
    if (name == "sine") return level + param("a", 0.4) * std::sin(param("omega", 2.0 * pi) * u);
    if (name == "sqrt_trend") {
      return level + param("scale", 1.0) * (param("a", 1.0) * std::sqrt(u) - param("b", 0.0) * std::sin(param("omega", 0.0) * u));
    }
    if (name == "linear_trend") return level + param("a", 1.0) * u;
    if (name == "exp_trend") return level + param("a", 1.0) * std::exp(param("b", 1.0) * u);
    if (name == "log_trend") return level + param("a", 1.0) * std::log1p(param("b", 1.0) * u);
    if (name == "sine_cosine_mix") {
      return level + param("a", 0.3) * std::sin(param("omega", 2.0 * pi) * u) +
             param("b", 0.3) * std::cos(param("omega2", pi) * u);
    }
    if (name == "constant") return level;
    fail(ErrorKind::Registry, "unknown loading function '" + name + "'");
  }
};

inline const std::vector<std::string>& loading_registry() {
  static const std::vector<std::string> names = {"cosine",     "sine",     "sqrt_trend",       "linear_trend",
                                                 "exp_trend",  "log_trend", "sine_cosine_mix", "constant"};
  return names;
}

inline LoadingFunction make_loading(std::string name, std::map<std::string, double> params = {}) {
  const auto& names = loading_registry();
  require(std::find(names.begin(), names.end(), name) != names.end(), ErrorKind::Registry,
          "unknown loading function '" + name + "'");
  return LoadingFunction{std::move(name), std::move(params)};
}

/// Values of a registered function on u = t/T, t = 1..T.
inline Eigen::VectorXd loading_library(const LoadingFunction& fn, int T) {
  require(T >= 1, ErrorKind::Parameter, "grid length must be positive");
  make_loading(fn.name);
  Eigen::VectorXd out(T);
  for (int t = 1; t <= T; ++t) out(t - 1) = fn(static_cast<double>(t) / T);
  return out;
}

/// 0.4 cos(3 pi u): first-factor loading of series 12 in the figure set.
inline LoadingFunction figure_loading_1_12() {
  return make_loading("cosine", {{"a", 0.4}, {"omega", 3.0 * std::numbers::pi}});
}

/// 0.6 (0.7 sqrt(u) - 0.5 sin(1.2 pi u)): second-factor loading of series 8.
inline LoadingFunction figure_loading_2_8() {
  return make_loading("sqrt_trend", {{"scale", 0.6}, {"a", 0.7}, {"b", 0.5}, {"omega", 1.2 * std::numbers::pi}});
}

/// Loading functions assigned cyclically over (series, factor) pairs, with
/// (12, 1) and (8, 2) (1-based) pinned to the two figure functions.
/// Keys are 0-based (series, factor).
inline std::map<std::pair<int, int>, LoadingFunction> default_loading_spec(int N, int r) {
  constexpr double pi = std::numbers::pi;
  const std::vector<LoadingFunction> cycle = {
      make_loading("cosine", {{"level", 2.2}, {"a", 1.0}, {"omega", 3.0 * pi}}),
      make_loading("sqrt_trend", {{"level", 1.35}, {"scale", 1.5}, {"a", 0.7}, {"b", 0.5}, {"omega", 1.2 * pi}}),
      make_loading("sine", {{"level", 1.95}, {"a", 1.25}, {"omega", 2.0 * pi}}),
      make_loading("linear_trend", {{"level", 1.1}, {"a", 2.0}}),
      make_loading("sine_cosine_mix", {{"level", 1.75}, {"a", 0.75}, {"b", 0.75}, {"omega", 2.0 * pi}, {"omega2", pi}}),
      make_loading("exp_trend", {{"level", 0.45}, {"a", 1.5}, {"b", 0.7}}),
      make_loading("log_trend", {{"level", 1.5}, {"a", 1.5}, {"b", 2.0}}),
      make_loading("cosine", {{"level", -1.75}, {"a", 0.75}, {"omega", 2.0 * pi}}),
  };

  std::map<std::pair<int, int>, LoadingFunction> spec;
  for (int i = 0; i < N; ++i) {
    for (int n = 0; n < r; ++n) {
      spec[{i, n}] = cycle[static_cast<std::size_t>((i * r + n * 3) % static_cast<int>(cycle.size()))];
    }
  }
  if (N >= 12 && r >= 1) spec[{11, 0}] = figure_loading_1_12();
  if (N >= 8 && r >= 2) spec[{7, 1}] = figure_loading_2_8();
  return spec;
}

// ---------------------------------------------------------------------------

struct DgpConfig {
  int N = 20;
  int T = 512;
  int r = 2;
  std::vector<double> theta = {0.0, 0.0};
  NoiseCov noise_cov = DiagonalUniform{};
  /// Overrides on top of default_loading_spec(N, r); 0-based (series, factor).
  std::map<std::pair<int, int>, LoadingFunction> loading_spec;
  std::vector<double> factor_innovation_sds = {0.9, 0.7};
  std::uint64_t seed = 1;
  int burn_in = 100;
  /// Multiplies the idiosyncratic draw; 0 gives a noiseless panel (test use).
  double noise_scale = 1.0;
};

inline void validate(const DgpConfig& c) {
  require(c.N >= 1 && c.T >= 4 && c.r >= 1, ErrorKind::Parameter, "DGP needs N >= 1, T >= 4, r >= 1");
  require(static_cast<int>(c.theta.size()) == c.r, ErrorKind::Parameter, "theta must have r entries");
  require(static_cast<int>(c.factor_innovation_sds.size()) == c.r, ErrorKind::Parameter,
          "factor_innovation_sds must have r entries");
  for (double th : c.theta) require(th >= 0.0 && th <= 1.0, ErrorKind::Parameter, "theta_k must lie in [0, 1]");
  for (double b : c.factor_innovation_sds) {
    require(std::abs(b) < 1.0 && b != 0.0, ErrorKind::Parameter, "factor innovation sds need 0 < |beta_i| < 1");
  }
  if (const auto* toep = std::get_if<Toeplitz>(&c.noise_cov)) {
    require(std::abs(toep->gamma) < 1.0, ErrorKind::Parameter, "Toeplitz gamma must satisfy |gamma| < 1");
  } else {
    const auto& d = std::get<DiagonalUniform>(c.noise_cov);
    require(d.lo < d.hi, ErrorKind::Parameter, "DiagonalUniform needs lo < hi");
  }
  require(c.noise_scale >= 0.0, ErrorKind::Parameter, "noise_scale must be non-negative");
  require(c.burn_in >= 0, ErrorKind::Parameter, "burn_in must be non-negative");
  for (const auto& [key, fn] : c.loading_spec) {
    require(key.first >= 0 && key.first < c.N && key.second >= 0 && key.second < c.r, ErrorKind::Parameter,
            "loading override outside the (series, factor) range");
    make_loading(fn.name);
  }
}

inline bool is_nonstationary(const DgpConfig& c) {
  return std::any_of(c.theta.begin(), c.theta.end(), [](double th) { return th >= 1.0; });
}

struct SimulatedDataset {
  Eigen::MatrixXd Y;  // T x N
  Eigen::MatrixXd F_true;  // T x r
  gls::LoadingField Lambda_true;
  Eigen::MatrixXd e;  // T x N
  Eigen::MatrixXd Gamma_e;
};

inline gls::LoadingField true_loadings(const DgpConfig& config) {
  auto spec = default_loading_spec(config.N, config.r);
  for (const auto& [key, fn] : config.loading_spec) spec[key] = fn;
  gls::LoadingField field(config.T, config.N, config.r);
  for (const auto& [key, fn] : spec) field.by_factor[static_cast<std::size_t>(key.second)].col(key.first) = loading_library(fn, config.T);
  return field;
}

/// Symmetric square root of a positive definite matrix.
inline Eigen::MatrixXd sqrt_pd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  require(es.info() == Eigen::Success && es.eigenvalues()(0) > 0.0, ErrorKind::Numeric,
          "idiosyncratic covariance is not positive definite");
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
}

/// F_{k,t} = theta_k F_{k,t-1} + eta_{k,t}, F_{k,0} = 0 (burn-in only when theta_k < 1);
/// e_t ~ N(0, Gamma_e); Y_t = Lambda(t) F_t + e_t.
inline SimulatedDataset simulate_dgp(const DgpConfig& config) {
  validate(config);
  const int T = config.T;
  const int N = config.N;
  const int r = config.r;
  SimulatedDataset ds;
  ds.Gamma_e = gen_noise_cov(config.noise_cov, N, config.seed);
  ds.Lambda_true = true_loadings(config);

  std::normal_distribution<double> normal(0.0, 1.0);
  ds.F_true.resize(T, r);
  for (int k = 0; k < r; ++k) {
    auto rng = make_rng(config.seed, 0x666163ULL + static_cast<std::uint64_t>(k));
    const double th = config.theta[static_cast<std::size_t>(k)];
    const double sd = config.factor_innovation_sds[static_cast<std::size_t>(k)];
    double f = 0.0;
    if (th < 1.0) {
      for (int b = 0; b < config.burn_in; ++b) f = th * f + sd * normal(rng);
    }
    for (int t = 0; t < T; ++t) {
      f = th * f + sd * normal(rng);
      ds.F_true(t, k) = f;
    }
  }

  const Eigen::MatrixXd root = sqrt_pd(ds.Gamma_e);
  auto rng = make_rng(config.seed, 0x6964696fULL);
  Eigen::MatrixXd z(T, N);
  for (int t = 0; t < T; ++t) {
    for (int i = 0; i < N; ++i) z(t, i) = normal(rng);
  }
  ds.e = config.noise_scale * (z * root);

  ds.Y = ds.e;
  for (int n = 0; n < r; ++n) {
    ds.Y.array() += ds.Lambda_true.by_factor[static_cast<std::size_t>(n)].array().colwise() * ds.F_true.col(n).array();
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Monte Carlo harness

struct ReplicationResult {
  int replication = 0;
  bool ok = false;
  std::string error;
  double r2 = 0.0;
  double mse = 0.0;
  int n_iter = 0;
};

/// Full pipeline on one simulated dataset, optionally returning the fit.
struct ReplicationOutput {
  ReplicationResult result;
  std::optional<gls::GlsFit> fit;
  std::optional<factors::FactorEstimate> aligned_factors;
  std::optional<SimulatedDataset> data;
};

inline std::uint64_t replication_seed(std::uint64_t seed, int replication) {
  auto rng = make_rng(seed, 0x7265706cULL + static_cast<std::uint64_t>(replication));
  return rng();
}

inline factors::Method extraction_method(const DgpConfig& config) {
  if (is_nonstationary(config)) return factors::GeneralizedCovariance{1, 1, 1};
  return factors::Pca{};
}

/// Re-expresses loadings fitted against f_est in the coordinates of f_true.
/// With f_est ~ f_true K (K from least squares), Lambda_hat(t) f_est_t is
/// Lambda_hat(t) K' f_true_t, so the comparable loading is Lambda_hat(t) K'.
/// A pure rotation-and-rescale leaves K close to, but not exactly, the identity
/// because sample factor correlations are never exactly zero.
inline gls::LoadingField to_true_coordinates(const gls::LoadingField& lambda, const Eigen::MatrixXd& f_est,
                                             const Eigen::MatrixXd& f_true) {
  const Eigen::MatrixXd k = (f_true.transpose() * f_true).ldlt().solve(f_true.transpose() * f_est);
  gls::LoadingField out(lambda.T(), lambda.N(), lambda.r());
  for (int n = 0; n < lambda.r(); ++n) {
    auto& dst = out.by_factor[static_cast<std::size_t>(n)];
    dst.setZero();
    for (int m = 0; m < lambda.r(); ++m) dst += k(n, m) * lambda.by_factor[static_cast<std::size_t>(m)];
  }
  return out;
}

/// Factors are linear combinations F = Y_s X of the standardized panel, so
/// they lose their sample mean. The model has no intercept, so the same X is
/// applied to the scaled but uncentered panel to restore the factor level.
inline Eigen::MatrixXd uncentered_factors(const Panel& standardized, const Eigen::MatrixXd& f) {
  require(standardized.standardized, ErrorKind::Parameter, "panel must be standardized");
  const Eigen::MatrixXd x = standardized.values.completeOrthogonalDecomposition().solve(f);
  const Eigen::RowVectorXd shift = (standardized.means.array() / standardized.sds.array()).matrix().transpose() * x;
  return f.rowwise() + shift;
}

/// simulate -> standardize -> extract -> rotate/rescale against the truth ->
/// fit loadings on the original-scale panel -> R^2 and MSE.
inline ReplicationOutput run_replication(const DgpConfig& config, const wavelet::Basis& basis, const gls::FitOptions& fit_opts,
                                         bool keep = false) {
  ReplicationOutput out;
  SimulatedDataset ds = simulate_dgp(config);
  Panel raw = Panel::from_matrix(ds.Y);
  const Panel standardized = standardize(raw);
  factors::FactorEstimate est = factors::extract(standardized, config.r, extraction_method(config));
  est.F = uncentered_factors(standardized, est.F);

  const eval::RotationResult rot = eval::procrustes_rotation(ds.F_true, est.F);
  factors::FactorEstimate aligned = est;
  aligned.F = rot.F_rotated_rescaled;

  gls::GlsFit fit = gls::fit_iterative(raw, aligned, basis, fit_opts);
  fit.Lambda = to_true_coordinates(fit.Lambda, aligned.F, ds.F_true);
  out.result.ok = true;
  out.result.r2 = eval::r2_factors(ds.F_true, aligned.F);
  out.result.mse = eval::loading_mse(fit.Lambda, ds.Lambda_true);
  out.result.n_iter = fit.n_iter;
  if (keep) {
    out.fit = std::move(fit);
    out.aligned_factors = std::move(aligned);
    out.data = std::move(ds);
  }
  return out;
}

struct ExperimentReport {
  DgpConfig config;
  wavelet::Family family = wavelet::Family::Haar;
  int J = 0;
  std::uint64_t seed = 0;
  std::vector<ReplicationResult> replications;
  int n_failed = 0;
  double mean_r2 = 0.0;
  double median_mse = 0.0;
  int median_replication = -1;
};

inline constexpr double kMaxFailureShare = 0.05;

inline ExperimentReport run_experiment(const DgpConfig& config, wavelet::Family family, int n_reps, std::uint64_t seed,
                                       int threads = 1, const gls::FitOptions& fit_opts = {}) {
  require(n_reps >= 1, ErrorKind::Parameter, "n_reps must be at least 1");
  validate(config);
  ExperimentReport report;
  report.config = config;
  report.family = family;
  report.seed = seed;
  report.J = wavelet::select_resolution(config.T);
  const wavelet::Basis basis = wavelet::evaluate_basis(family, report.J, config.T);

  report.replications.resize(static_cast<std::size_t>(n_reps));
  parallel_for(n_reps, threads, [&](int rep) {
    DgpConfig cfg = config;
    cfg.seed = replication_seed(seed, rep);
    ReplicationResult& slot = report.replications[static_cast<std::size_t>(rep)];
    try {
      slot = run_replication(cfg, basis, fit_opts).result;
    } catch (const std::exception& ex) {
      slot.ok = false;
      slot.error = ex.what();
    }
    slot.replication = rep;
  });

  std::vector<double> mse;
  std::vector<int> index;
  double r2_sum = 0.0;
  for (const auto& rep : report.replications) {
    if (!rep.ok) {
      ++report.n_failed;
      continue;
    }
    r2_sum += rep.r2;
    mse.push_back(rep.mse);
    index.push_back(rep.replication);
  }
  if (report.n_failed > kMaxFailureShare * n_reps || mse.empty()) {
    std::string first_error;
    for (const auto& rep : report.replications) {
      if (!rep.ok) {
        first_error = rep.error;
        break;
      }
    }
    fail(ErrorKind::Numeric, std::to_string(report.n_failed) + " of " + std::to_string(n_reps) +
                                 " replications failed (first error: " + first_error + ")");
  }
  report.mean_r2 = r2_sum / static_cast<double>(mse.size());
  const std::size_t med = eval::median_index(mse);
  report.median_mse = mse[med];
  report.median_replication = index[med];
  return report;
}

/// Re-runs the median-MSE replication and returns its full output.
inline ReplicationOutput median_path_fit(const ExperimentReport& report, const gls::FitOptions& fit_opts = {}) {
  require(report.median_replication >= 0, ErrorKind::Parameter, "report has no median replication");
  DgpConfig cfg = report.config;
  cfg.seed = replication_seed(report.seed, report.median_replication);
  const wavelet::Basis basis = wavelet::evaluate_basis(report.family, report.J, cfg.T);
  ReplicationOutput out = run_replication(cfg, basis, fit_opts, true);
  out.result.replication = report.median_replication;
  return out;
}

// ---------------------------------------------------------------------------
// Experiment grids and reports

struct ExperimentCell {
  DgpConfig config;
  wavelet::Family family = wavelet::Family::Haar;
};

/// N in {20,30,100} x T in {512,1024,2048} x theta in {0,0.5,1} x {Diag, Toep(0.7)} x {Haar, D8}.
inline std::vector<ExperimentCell> default_grid() {
  std::vector<ExperimentCell> cells;
  for (auto family : {wavelet::Family::Haar, wavelet::Family::Daubechies8}) {
    for (const NoiseCov& cov : {NoiseCov{DiagonalUniform{0.5, 1.5}}, NoiseCov{Toeplitz{0.7}}}) {
      for (int N : {20, 30, 100}) {
        for (int T : {512, 1024, 2048}) {
          for (double theta : {0.0, 0.5, 1.0}) {
            ExperimentCell cell;
            cell.family = family;
            cell.config.N = N;
            cell.config.T = T;
            cell.config.theta = {theta, theta};
            cell.config.noise_cov = cov;
            cells.push_back(cell);
          }
        }
      }
    }
  }
  return cells;
}

inline std::string theta_label(const std::vector<double>& theta) {
  std::string out;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    if (i > 0 && theta[i] == theta[0]) continue;
    if (!out.empty()) out += ';';
    out += csv::fmt(theta[i]);
  }
  bool uniform = std::all_of(theta.begin(), theta.end(), [&](double v) { return v == theta[0]; });
  if (!uniform) {
    out.clear();
    for (std::size_t i = 0; i < theta.size(); ++i) out += (i ? ";" : "") + csv::fmt(theta[i]);
  }
  return out;
}

inline void write_table_csv(std::ostream& os, const std::vector<ExperimentReport>& reports) {
  os << "N,T,theta,cov,family,r2,mse_m\n";
  for (const auto& rep : reports) {
    os << rep.config.N << ',' << rep.config.T << ',' << theta_label(rep.config.theta) << ','
       << noise_cov_label(rep.config.noise_cov) << ',' << wavelet::family_name(rep.family) << ','
       << csv::fmt(rep.mean_r2) << ',' << csv::fmt(rep.median_mse) << '\n';
  }
}

inline void write_replications_csv(std::ostream& os, const std::vector<ExperimentReport>& reports) {
  os << "cell,N,T,theta,cov,family,replication,status,r2,mse,n_iter\n";
  for (std::size_t c = 0; c < reports.size(); ++c) {
    const auto& rep = reports[c];
    for (const auto& row : rep.replications) {
      os << c << ',' << rep.config.N << ',' << rep.config.T << ',' << theta_label(rep.config.theta) << ','
         << noise_cov_label(rep.config.noise_cov) << ',' << wavelet::family_name(rep.family) << ',' << row.replication
         << ',' << (row.ok ? "ok" : "failed") << ',' << csv::fmt(row.r2) << ',' << csv::fmt(row.mse) << ','
         << row.n_iter << '\n';
    }
  }
}

}  // namespace tvload::sim
