// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <Eigen/Dense>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <tuple>
#include <vector>

#include "oracles.hpp"
#include "tvload/tvload.hpp"

namespace fs = std::filesystem;
using namespace tvload;

namespace {

constexpr int kReps = 100;
constexpr std::uint64_t kSeed = 20240601;

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += (ok ? "" : "FAILED ") + what;
  }
};

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

sim::DgpConfig cell_config(int N, int T, double theta) {
  sim::DgpConfig cfg;
  cfg.N = N;
  cfg.T = T;
  cfg.theta = {theta, theta};
  cfg.noise_cov = sim::DiagonalUniform{0.5, 1.5};
  return cfg;
}

// ---------------------------------------------------------------------------

Outcome criterion_1(int threads) {
  Outcome out;
  {
    const auto rep = sim::run_experiment(cell_config(20, 512, 0.0), wavelet::Family::Haar, kReps, kSeed, threads);
    out.check(std::abs(rep.mean_r2 - 0.9341) <= 0.04, "N20 T512 theta0 Haar R2=" + fmt("%.4f", rep.mean_r2) + " (target 0.9341+-0.04)");
    out.check(rep.median_mse < 0.05, "N20 T512 theta0 Haar MSE_m=" + fmt("%.4f", rep.median_mse) + " (< 0.05)");
  }
  {
    const auto rep = sim::run_experiment(cell_config(30, 1024, 0.5), wavelet::Family::Daubechies8, kReps, kSeed, threads);
    out.check(std::abs(rep.mean_r2 - 0.8671) <= 0.05, "N30 T1024 theta0.5 D8 R2=" + fmt("%.4f", rep.mean_r2) + " (target 0.8671+-0.05)");
  }
  {
    const auto rep = sim::run_experiment(cell_config(20, 512, 1.0), wavelet::Family::Haar, kReps, kSeed, threads);
    out.check(std::abs(rep.mean_r2 - 0.7450) <= 0.07, "N20 T512 theta1 Haar R2=" + fmt("%.4f", rep.mean_r2) + " (target 0.7450+-0.07)");
  }
  return out;
}

Outcome criterion_2(int threads) {
  Outcome out;
  using Key = std::tuple<std::string, int, double, std::string>;  // family, N, theta, cov
  std::map<Key, std::map<int, double>> mse;
  for (const auto& cell : sim::default_grid()) {
    const auto rep = sim::run_experiment(cell.config, cell.family, kReps, kSeed, threads);
    const Key key{wavelet::family_name(cell.family), cell.config.N, cell.config.theta[0],
                  sim::noise_cov_label(cell.config.noise_cov)};
    mse[key][cell.config.T] = rep.median_mse;
  }
  int violations = 0;
  double worst = 0.0;
  for (const auto& [key, by_t] : mse) {
    const double m512 = by_t.at(512);
    const double m1024 = by_t.at(1024);
    const double m2048 = by_t.at(2048);
    worst = std::max({worst, m1024 / m512, m2048 / m1024});
    if (m1024 > 1.1 * m512 || m2048 > 1.1 * m1024) {
      ++violations;
      out.check(false, std::get<0>(key) + " N" + std::to_string(std::get<1>(key)) + " theta" + fmt("%g", std::get<2>(key)) +
                           " " + std::get<3>(key) + ": " + fmt("%.4f", m512) + " / " + fmt("%.4f", m1024) + " / " +
                           fmt("%.4f", m2048));
    }
  }
  out.check(violations == 0, std::to_string(mse.size()) + " groups, " + std::to_string(violations) +
                                 " violations, worst ratio " + fmt("%.3f", worst) + " (limit 1.1)");
  return out;
}

Outcome criterion_3() {
  Outcome out;
  std::mt19937_64 rng(3);
  constexpr int N = 3, T = 16, J = 2;
  const auto basis = wavelet::evaluate_basis(wavelet::Family::Haar, J, T);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    factors::FactorEstimate est;
    est.F = tvtest::random_matrix(rng, T, 1);
    const gls::DesignBlock d = gls::build_design(est, basis);
    const Panel p = Panel::from_matrix(tvtest::random_matrix(rng, T, N));
    const Eigen::MatrixXd gamma = tvtest::random_spd(rng, N);

    const auto p_cols = d.Psi.cols();
    Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(N * T, N * p_cols);
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Zero(N * T, N * T);
    Eigen::VectorXd y(N * T);
    for (int m = 0; m < N; ++m) {
      theta.block(m * T, m * p_cols, T, p_cols) = d.Psi;
      y.segment(m * T, T) = p.values.col(m);
      for (int j = 0; j < N; ++j) sigma.block(m * T, j * T, T, T) = gamma(m, j) * Eigen::MatrixXd::Identity(T, T);
    }
    const Eigen::MatrixXd sigma_inv = sigma.inverse();
    const Eigen::MatrixXd lhs = theta.transpose() * sigma_inv * theta;
    const Eigen::VectorXd dense = lhs.inverse() * (theta.transpose() * sigma_inv * y);

    const gls::CoefficientBlock beta = gls::gls_step(p, d, gamma);
    for (int m = 0; m < N; ++m) {
      worst = std::max(worst, (beta.data.col(m) - dense.segment(m * p_cols, p_cols)).cwiseAbs().maxCoeff());
    }
  }
  out.check(worst <= 1e-8, "100 instances, max |diff| " + fmt("%.3g", worst) + " (<= 1e-8)");
  return out;
}

Outcome criterion_4() {
  Outcome out;
  double min_r2 = 1.0;
  double max_mse = 0.0;
  int bad = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    sim::DgpConfig cfg = cell_config(20, 512, 0.0);
    cfg.seed = seed;
    cfg.noise_scale = 0.0;
    for (int i = 0; i < cfg.N; ++i) {
      for (int n = 0; n < cfg.r; ++n) {
        cfg.loading_spec[{i, n}] = sim::make_loading("constant", {{"level", 1.0 + 0.05 * i - 1.3 * n}});
      }
    }
    const auto basis = wavelet::evaluate_basis(wavelet::Family::Haar, wavelet::select_resolution(cfg.T), cfg.T);
    const auto res = sim::run_replication(cfg, basis, {}).result;
    min_r2 = std::min(min_r2, res.r2);
    max_mse = std::max(max_mse, res.mse);
    if (!(res.r2 >= 0.999 && res.mse <= 1e-6)) ++bad;
  }
  out.check(bad == 0, "20 seeds, min R2 " + fmt("%.12f", min_r2) + ", max MSE " + fmt("%.3g", max_mse));
  return out;
}

Outcome criterion_5() {
  Outcome out;
  double haar = 0.0;
  for (auto [J, T] : {std::pair{2, 8}, std::pair{5, 512}, std::pair{5, 1024}}) {
    const auto b = wavelet::evaluate_basis(wavelet::Family::Haar, J, T);
    haar = std::max(haar, tvtest::max_abs(b.B.transpose() * b.B / T - Eigen::MatrixXd::Identity(1 << J, 1 << J)));
  }
  out.check(haar <= 1e-12, "Haar Gram deviation " + fmt("%.3g", haar));

  const auto d8 = wavelet::evaluate_basis(wavelet::Family::Daubechies8, 3, 1024);
  const double gram = tvtest::max_abs(d8.B.transpose() * d8.B / 1024.0 - Eigen::MatrixXd::Identity(8, 8));
  out.check(gram <= 0.01, "D8 Gram deviation at T=1024 " + fmt("%.3g", gram));

  const auto& table = wavelet::default_d8_table();
  const long long per = table.points_per_unit();
  double unity = 0.0;
  for (long long m = 0; m < per; ++m) {
    double acc = 0.0;
    for (int k = 0; k < wavelet::kD8Support; ++k) acc += table.phi_at(m + k * per);
    unity = std::max(unity, std::abs(acc - 1.0));
  }
  out.check(unity <= 1e-8, "partition of unity " + fmt("%.3g", unity));

  double two_scale = 0.0;
  const auto n_points = static_cast<long long>(table.phi_values().size());
  for (long long m = 0; m < n_points; ++m) {
    double acc = 0.0;
    for (int n = 0; n < 8; ++n) acc += wavelet::kD8Filter[static_cast<std::size_t>(n)] * table.phi_at(2 * m - n * per);
    two_scale = std::max(two_scale, std::abs(std::sqrt(2.0) * acc - table.phi_at(m)));
  }
  out.check(two_scale <= 1e-8, "two-scale relation " + fmt("%.3g", two_scale));
  return out;
}

Outcome criterion_6() {
  Outcome out;
  std::mt19937_64 rng(6);
  double trace_gap = 0.0;
  int beaten = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const Eigen::MatrixXd ref = tvtest::random_matrix(rng, 100, 3);
    const Eigen::MatrixXd est = tvtest::random_matrix(rng, 100, 3);
    const auto res = eval::procrustes_rotation(ref, est);
    const Eigen::MatrixXd c = eval::cross_correlation(ref, est);
    trace_gap = std::max(trace_gap, std::abs(res.trace_value - Eigen::JacobiSVD<Eigen::MatrixXd>(c).singularValues().sum()));
    for (int q = 0; q < 1000; ++q) {
      if ((c * tvtest::random_orthogonal(rng, 3)).trace() > res.trace_value + 1e-12) ++beaten;
    }
  }
  out.check(trace_gap <= 1e-9, "max |trace - sum sv| " + fmt("%.3g", trace_gap));
  out.check(beaten == 0, std::to_string(beaten) + " of 100000 random rotations beat A*");
  return out;
}

Outcome criterion_7() {
  Outcome out;
  std::mt19937_64 rng(7);
  const Eigen::MatrixXd f = tvtest::random_matrix(rng, 200, 3);
  double worst = 0.0;
  int tried = 0;
  while (tried < 100) {
    const Eigen::MatrixXd h = tvtest::random_matrix(rng, 3, 3);
    if (std::abs(h.determinant()) < 1e-3) continue;
    ++tried;
    worst = std::max(worst, std::abs(eval::r2_factors(f, f * h) - 1.0));
  }
  out.check(worst <= 1e-9, "100 invertible H, max |R2 - 1| " + fmt("%.3g", worst));
  return out;
}

Outcome criterion_8() {
  Outcome out;
  std::mt19937_64 rng(8);
  const int N = 6, T = 256;
  const auto basis = wavelet::evaluate_basis(wavelet::Family::Daubechies8, wavelet::select_resolution(T), T);
  factors::FactorEstimate est;
  est.F = tvtest::random_matrix(rng, T, 2);
  const Panel p = Panel::from_matrix(tvtest::random_matrix(rng, T, N));
  const gls::DesignBlock d = gls::build_design(est, basis);
  const gls::CoefficientBlock ols = gls::gls_step(p, d, Eigen::MatrixXd::Identity(N, N));
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const auto beta = gls::gls_step(p, d, tvtest::random_spd(rng, N));
    worst = std::max(worst, (beta.data - ols.data).cwiseAbs().maxCoeff());
  }
  out.check(worst <= 1e-8, "50 PD Gamma, max |GLS - OLS| " + fmt("%.3g", worst));
  const gls::GlsFit fit = gls::fit_iterative(p, est, basis);
  const bool has_delta = !fit.deltas.empty();
  const double delta2 = has_delta ? fit.deltas[0] : std::numeric_limits<double>::infinity();
  out.check(has_delta && delta2 < gls::FitOptions{}.delta, "iteration-2 delta " + fmt("%.3g", delta2));
  return out;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(TVLOAD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

using Snapshot = std::map<std::string, std::string>;

// Relative path -> contents for every regular file under root.
Snapshot snapshot(const fs::path& root) {
  Snapshot files;
  if (!fs::exists(root)) return files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) files[fs::relative(entry.path(), root).generic_string()] = csv::slurp(entry.path().string());
  }
  return files;
}

std::string compare(const Snapshot& a, const Snapshot& b, bool& same) {
  same = !a.empty() && a.size() == b.size();
  for (const auto& [name, body] : a) {
    const auto it = b.find(name);
    if (it == b.end() || it->second != body) {
      same = false;
      return name + " differs";
    }
  }
  return std::to_string(a.size()) + " files identical";
}

Outcome criterion_9(const fs::path& scratch) {
  Outcome out;
  sim::DgpConfig cfg = cell_config(20, 512, 0.0);
  cfg.seed = 9;
  const auto ds = sim::simulate_dgp(cfg);
  const Panel panel = Panel::from_matrix(ds.Y);
  const auto est = factors::pca_factors(standardize(panel), 2);
  const auto basis = wavelet::evaluate_basis(wavelet::Family::Daubechies8, wavelet::select_resolution(cfg.T), cfg.T);
  const auto fit = gls::fit_iterative(panel, est, basis);
  const auto draws = bootstrap::draw(panel, fit, est, basis, 100, 99);
  const auto b90 = bootstrap::bands(draws, fit, basis, 0.90);
  const auto b95 = bootstrap::bands(draws, fit, basis, 0.95);
  long long outside = 0;
  for (int t = 0; t < cfg.T; ++t) {
    for (int m = 0; m < cfg.N; ++m) {
      for (int n = 0; n < 2; ++n) {
        if (b90.lower(t, m, n) < b95.lower(t, m, n) || b90.upper(t, m, n) > b95.upper(t, m, n)) ++outside;
      }
    }
  }
  out.check(outside == 0, std::to_string(outside) + " points where the 90% band leaves the 95% band");

  // Byte-identical band files, in process and through the command line.
  auto write = [&](const fs::path& path, std::uint64_t seed) {
    std::ofstream os(path);
    bootstrap::write_bands_csv(os, bootstrap::residual_bootstrap(panel, fit, est, basis, 100, 0.95, seed), panel.series_ids);
  };
  write(scratch / "bands_a.csv", 5);
  write(scratch / "bands_b.csv", 5);
  out.check(csv::slurp((scratch / "bands_a.csv").string()) == csv::slurp((scratch / "bands_b.csv").string()),
            "in-process band files identical");

  {
    std::ofstream os(scratch / "panel.csv");
    write_panel_csv(os, panel);
  }
  const std::string est_dir = (scratch / "estimate").string();
  bool ok = run_cli("estimate --input " + (scratch / "panel.csv").string() + " --r 2 --output-dir " + est_dir) == 0;
  // Band files only: the run report echoes the output directory.
  auto band_files = [&](const fs::path& dir) {
    Snapshot files;
    for (auto& [name, body] : snapshot(dir)) {
      if (name == "bands.csv" || name.rfind("plot/", 0) == 0) files[name] = std::move(body);
    }
    return files;
  };
  ok = ok && run_cli("bootstrap --input " + est_dir + " --seed 5 --output-dir " + (scratch / "boot_a").string()) == 0;
  ok = ok && run_cli("bootstrap --input " + est_dir + " --seed 5 --output-dir " + (scratch / "boot_b").string()) == 0;
  bool same = false;
  const std::string diff = compare(band_files(scratch / "boot_a"), band_files(scratch / "boot_b"), same);
  out.check(ok && same, "CLI bootstrap twice: " + (ok ? diff : "command failed"));
  return out;
}

Outcome criterion_10(const fs::path& scratch) {
  Outcome out;
  const fs::path grid = scratch / "grid.json";
  std::ofstream(grid) << R"([{"N": 20, "T": 512, "family": "haar"},
 {"N": 20, "T": 512, "theta": [0.5, 0.5], "family": "d8", "noise_cov": {"type": "Toeplitz", "gamma": 0.7}},
 {"N": 20, "T": 512, "theta": [1, 1], "family": "haar"}]
)";
  const std::string args = "simulate --input " + grid.string() + " --reps 20 --seed 11 --median-paths";
  // Same command twice into the same directory; the report echoes its location.
  const fs::path dir = scratch / "sim";
  const bool first_ok = run_cli(args + " --output-dir " + dir.string()) == 0;
  const Snapshot first = snapshot(dir);
  const bool ok = first_ok && run_cli(args + " --output-dir " + dir.string()) == 0;
  bool same = false;
  const std::string diff = compare(first, snapshot(dir), same);
  out.check(ok && same, ok ? diff : "command failed");
  return out;
}

}  // namespace

int main() {
  const int threads = resolve_threads(0);
  const fs::path scratch = fs::temp_directory_path() / "tvload_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch / "c9");
  fs::create_directories(scratch / "c10");

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Monte Carlo reproduction of three reference cells", [&] { return criterion_1(threads); }},
      {"median MSE non-increasing in T over the default grid", [&] { return criterion_2(threads); }},
      {"Kronecker GLS solver equals dense GLS", [] { return criterion_3(); }},
      {"noiseless recovery", [] { return criterion_4(); }},
      {"wavelet suite", [] { return criterion_5(); }},
      {"Procrustes optimality", [] { return criterion_6(); }},
      {"R2 invariance", [] { return criterion_7(); }},
      {"SUR collapse", [] { return criterion_8(); }},
      {"bootstrap nesting and determinism", [&] { return criterion_9(scratch / "c9"); }},
      {"CLI simulate determinism", [&] { return criterion_10(scratch / "c10"); }},
  };

  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome res;
    try {
      res = criteria[i].second();
    } catch (const std::exception& ex) {
      res.check(false, std::string("exception: ") + ex.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!res.pass) ++failures;
    std::cout << (res.pass ? "PASS" : "FAIL") << " criterion " << i + 1 << ": " << criteria[i].first << " -- "
              << res.detail << " [" << fmt("%.1f", secs) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
