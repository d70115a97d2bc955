#pragma once

// Command-line front end: estimate, select-r, simulate, bootstrap.
// Each command writes its artifacts into a flat output directory together
// with run_report.json and manifest.json (artifact names and SHA-256).

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <Eigen/Dense>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tvload/bootstrap.hpp"
#include "tvload/csv.hpp"
#include "tvload/error.hpp"
#include "tvload/factors.hpp"
#include "tvload/gls.hpp"
#include "tvload/panel.hpp"
#include "tvload/parallel.hpp"
#include "tvload/sim.hpp"
#include "tvload/sim_json.hpp"
#include "tvload/wavelet.hpp"

namespace tvload::cli {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunConfig {
  std::string command;
  std::string input;
  std::string output_dir;
  std::uint64_t seed = 1;
  int threads = 0;  // 0: TVLOAD_THREADS, else all cores
  std::optional<std::string> family;
  std::optional<int> J;
  double delta = 1e-6;
  int max_iter = 50;
  bool nonstationary = false;
  int k = 1;
  int d = 1;
  int dprime = 1;
  bool first_difference = false;
  std::optional<int> r;
  int r_max = 8;
  int B = 100;
  double level = 0.95;
  std::optional<int> reps;
  bool median_paths = false;
};

inline json config_to_json(const RunConfig& c) {
  auto opt = [](const auto& v) -> json { return v ? json(*v) : json(nullptr); };
  return {{"command", c.command},
          {"input", c.input},
          {"output_dir", c.output_dir},
          {"seed", c.seed},
          {"threads", c.threads},
          {"family", opt(c.family)},
          {"J", opt(c.J)},
          {"delta", c.delta},
          {"max_iter", c.max_iter},
          {"nonstationary", c.nonstationary},
          {"k", c.k},
          {"d", c.d},
          {"dprime", c.dprime},
          {"first_difference", c.first_difference},
          {"r", opt(c.r)},
          {"r_max", c.r_max},
          {"B", c.B},
          {"level", c.level},
          {"reps", opt(c.reps)},
          {"median_paths", c.median_paths}};
}

// ---------------------------------------------------------------------------
// Artifacts

inline std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  require(EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) == 1, ErrorKind::Io,
          "SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

/// Writes files under one directory and records their hashes for the manifest.
class ArtifactWriter {
 public:
  explicit ArtifactWriter(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    require(!ec, ErrorKind::Io, "cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  void write(const std::string& name, const std::string& content) {
    const fs::path path = dir_ / name;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write '" + path.string() + "'");
    out << content;
    out.close();
    require(static_cast<bool>(out), ErrorKind::Io, "failed writing '" + path.string() + "'");
    entries_[name] = {sha256_hex(content), content.size()};
  }

  void write_json(const std::string& name, const json& doc) { write(name, doc.dump(2) + "\n"); }

  /// manifest.json lists every artifact written so far, sorted by name.
  void finish() {
    json list = json::array();
    for (const auto& [name, entry] : entries_) {
      list.push_back({{"file", name}, {"sha256", entry.first}, {"bytes", entry.second}});
    }
    const std::string text = json{{"artifacts", list}}.dump(2) + "\n";
    std::ofstream out(dir_ / "manifest.json", std::ios::binary);
    require(static_cast<bool>(out), ErrorKind::Io, "cannot write manifest in '" + dir_.string() + "'");
    out << text;
  }

  [[nodiscard]] const fs::path& dir() const noexcept { return dir_; }

 private:
  fs::path dir_;
  std::map<std::string, std::pair<std::string, std::size_t>> entries_;
};

// ---------------------------------------------------------------------------
// Estimate artifacts

inline std::string factors_csv(const Panel& panel, const factors::FactorEstimate& est) {
  std::ostringstream os;
  os << "t,time";
  for (int n = 0; n < est.r(); ++n) os << ",F" << n + 1;
  os << '\n';
  for (int t = 0; t < est.T(); ++t) {
    os << t + 1 << ',' << panel.time_labels.at(static_cast<std::size_t>(t));
    for (int n = 0; n < est.r(); ++n) os << ',' << csv::fmt(est.F(t, n));
    os << '\n';
  }
  return os.str();
}

inline std::string loadings_csv(const Panel& panel, const gls::LoadingField& lambda) {
  std::ostringstream os;
  os << "t,series,factor,lambda_hat\n";
  for (int t = 0; t < lambda.T(); ++t) {
    for (int m = 0; m < lambda.N(); ++m) {
      for (int n = 0; n < lambda.r(); ++n) {
        os << t + 1 << ',' << panel.series_ids.at(static_cast<std::size_t>(m)) << ',' << n + 1 << ','
           << csv::fmt(lambda(t, m, n)) << '\n';
      }
    }
  }
  return os.str();
}

/// series,factor,level_j,shift_k,beta; the scaling coefficient has level_j = -1.
inline std::string coefficients_csv(const Panel& panel, const gls::CoefficientBlock& beta, const wavelet::Basis& basis) {
  std::ostringstream os;
  os << "series,factor,level_j,shift_k,beta\n";
  for (int m = 0; m < beta.N; ++m) {
    for (int n = 0; n < beta.r; ++n) {
      for (int c = 0; c < beta.n_basis; ++c) {
        const auto& col = basis.columns[static_cast<std::size_t>(c)];
        os << panel.series_ids.at(static_cast<std::size_t>(m)) << ',' << n + 1 << ',' << (col.scaling ? -1 : col.j) << ','
           << (col.scaling ? 0 : col.k) << ',' << csv::fmt(beta(m, n, c)) << '\n';
      }
    }
  }
  return os.str();
}

inline std::string matrix_csv(const Eigen::MatrixXd& m, const std::vector<std::string>& ids) {
  std::ostringstream os;
  os << "series";
  for (const auto& id : ids) os << ',' << id;
  os << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    os << ids.at(static_cast<std::size_t>(i));
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << ',' << csv::fmt(m(i, j));
    os << '\n';
  }
  return os.str();
}

inline double parse_cell(const std::string& text, const std::string& file, std::size_t row, std::size_t col) {
  double v = 0.0;
  require(csv::parse_double(text, v), ErrorKind::Parse,
          "'" + file + "' row " + std::to_string(row + 2) + ", column " + std::to_string(col + 1) + " is not a number");
  return v;
}

inline int parse_int_cell(const std::string& text, const std::string& file, std::size_t row, std::size_t col) {
  const double v = parse_cell(text, file, row, col);
  require(v == std::floor(v), ErrorKind::Parse,
          "'" + file + "' row " + std::to_string(row + 2) + ", column " + std::to_string(col + 1) + " is not an integer");
  return static_cast<int>(v);
}

inline Eigen::MatrixXd read_factors_csv(const std::string& path, int T) {
  const csv::Table table = csv::read_table(path);
  require(table.header.size() >= 3, ErrorKind::Parse, "'" + path + "' has no factor columns");
  const auto r = static_cast<Eigen::Index>(table.header.size() - 2);
  require(static_cast<int>(table.rows.size()) == T, ErrorKind::Shape,
          "'" + path + "' has " + std::to_string(table.rows.size()) + " rows, panel has T=" + std::to_string(T));
  Eigen::MatrixXd f(T, r);
  for (std::size_t t = 0; t < table.rows.size(); ++t) {
    require(table.rows[t].size() == table.header.size(), ErrorKind::Parse,
            "'" + path + "' row " + std::to_string(t + 2) + " has the wrong number of fields");
    for (Eigen::Index n = 0; n < r; ++n) {
      f(static_cast<Eigen::Index>(t), n) = parse_cell(table.rows[t][static_cast<std::size_t>(n + 2)], path, t, static_cast<std::size_t>(n + 2));
    }
  }
  return f;
}

inline gls::CoefficientBlock read_coefficients_csv(const std::string& path, const Panel& panel, int r, const wavelet::Basis& basis) {
  const csv::Table table = csv::read_table(path);
  require(table.header.size() == 5, ErrorKind::Parse, "'" + path + "' must have 5 columns");
  std::map<std::string, int> series_index;
  for (std::size_t i = 0; i < panel.series_ids.size(); ++i) series_index[panel.series_ids[i]] = static_cast<int>(i);
  gls::CoefficientBlock beta(panel.N(), r, basis.n_columns());
  std::vector<char> seen(static_cast<std::size_t>(beta.size()), 0);
  for (std::size_t row = 0; row < table.rows.size(); ++row) {
    const auto& f = table.rows[row];
    require(f.size() == 5, ErrorKind::Parse, "'" + path + "' row " + std::to_string(row + 2) + " has the wrong number of fields");
    auto it = series_index.find(std::string(csv::trim(f[0])));
    require(it != series_index.end(), ErrorKind::Parse, "'" + path + "' row " + std::to_string(row + 2) + ": unknown series '" + f[0] + "'");
    const int n = parse_int_cell(f[1], path, row, 1) - 1;
    const int j = parse_int_cell(f[2], path, row, 2);
    const int k = parse_int_cell(f[3], path, row, 3);
    require(n >= 0 && n < r, ErrorKind::Parse, "'" + path + "' row " + std::to_string(row + 2) + ": factor out of range");
    int c = 0;
    if (j >= 0) {
      require(j < basis.J && k >= 0 && k < (1 << j), ErrorKind::Parse,
              "'" + path + "' row " + std::to_string(row + 2) + ": (level_j, shift_k) outside the basis");
      c = (1 << j) + k;
    }
    beta(it->second, n, c) = parse_cell(f[4], path, row, 4);
    seen[static_cast<std::size_t>(it->second * beta.data.rows() + n * beta.n_basis + c)] = 1;
  }
  require(std::all_of(seen.begin(), seen.end(), [](char s) { return s != 0; }), ErrorKind::Parse,
          "'" + path + "' does not cover every (series, factor, basis column)");
  return beta;
}

// ---------------------------------------------------------------------------
// Shared plumbing

inline factors::Method method_from(const RunConfig& cfg) {
  if (!cfg.nonstationary) return factors::Pca{};
  require(cfg.k >= 1, ErrorKind::Parameter, "--k must be at least 1");
  require(cfg.d >= 0, ErrorKind::Parameter, "--d must be non-negative");
  require(cfg.dprime == 0 || cfg.dprime == 1, ErrorKind::Parameter, "--dprime must be 0 or 1");
  return factors::GeneralizedCovariance{cfg.k, cfg.d, cfg.dprime};
}

inline Panel prepare_panel(const Panel& raw, bool first_difference) {
  return standardize(first_difference ? tvload::first_difference(raw) : raw);
}

inline gls::FitOptions fit_options(const RunConfig& cfg) {
  require(cfg.delta > 0.0, ErrorKind::Parameter, "--delta must be positive");
  require(cfg.max_iter >= 1, ErrorKind::Parameter, "--max-iter must be at least 1");
  return {cfg.delta, cfg.max_iter, gls::ConvergenceNorm::SumOverT};
}

inline int resolution_for(const RunConfig& cfg, int T) {
  if (!cfg.J) return wavelet::select_resolution(T);
  require(*cfg.J >= 0 && (1LL << *cfg.J) <= T, ErrorKind::Parameter,
          "--J=" + std::to_string(*cfg.J) + " needs 0 <= J and 2^J <= T=" + std::to_string(T));
  return *cfg.J;
}

inline std::string required_input(const RunConfig& cfg) {
  require(!cfg.input.empty(), ErrorKind::Parameter, "--input is required for '" + cfg.command + "'");
  return cfg.input;
}

inline std::string required_output(const RunConfig& cfg) {
  require(!cfg.output_dir.empty(), ErrorKind::Parameter, "--output-dir is required for '" + cfg.command + "'");
  return cfg.output_dir;
}

inline Eigen::VectorXd full_spectrum(const Panel& panel, const factors::Method& method) {
  if (std::holds_alternative<factors::Pca>(method)) return factors::pca_spectrum(panel.values);
  const auto& g = std::get<factors::GeneralizedCovariance>(method);
  return factors::detail::all_eigenvalues_descending(factors::generalized_covariance(panel, g.k, g.d, g.dprime));
}

inline std::vector<double> to_vector(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

inline double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

inline json selection_to_json(const factors::FactorSelection& sel) {
  json intervals = json::array();
  for (const auto& iv : sel.intervals) {
    intervals.push_back({{"c_lo", iv.c_lo}, {"c_hi", iv.c_hi}, {"r", iv.r}, {"n_points", iv.n_points}});
  }
  json subsamples = json::array();
  for (const auto& s : sel.subsamples) subsamples.push_back({{"N", s.N}, {"T", s.T}});
  std::vector<bool> stable(sel.stable.begin(), sel.stable.end());
  return {{"r", sel.r},
          {"c_grid", sel.c_grid},
          {"subsamples", subsamples},
          {"ic", sel.ic},
          {"r_by_subsample", sel.r_by_subsample},
          {"stable", stable},
          {"intervals", intervals},
          {"widest_interval", sel.widest_interval}};
}

// ---------------------------------------------------------------------------
// estimate

struct EstimateResult {
  Panel panel;  // after differencing and standardization
  factors::FactorEstimate factors;
  wavelet::Basis basis;
  gls::GlsFit fit;
  json report;
};

inline EstimateResult run_estimate(const RunConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  const std::string input = required_input(cfg);
  const Panel raw = read_panel_csv(input);
  EstimateResult res;
  res.panel = prepare_panel(raw, cfg.first_difference);
  const factors::Method method = method_from(cfg);
  const gls::FitOptions opts = fit_options(cfg);
  const auto family = wavelet::parse_family(cfg.family.value_or("d8"));

  json selection = nullptr;
  int r = 0;
  if (cfg.r) {
    r = *cfg.r;
    require(r >= 1 && r < std::min(res.panel.N(), res.panel.T()), ErrorKind::Parameter,
            "--r=" + std::to_string(r) + " must lie in [1, min(N,T))");
  } else {
    factors::SelectionOptions sel_opts;
    sel_opts.r_max = cfg.r_max;
    const auto sel = factors::select_num_factors(res.panel, sel_opts);
    r = sel.r;
    selection = selection_to_json(sel);
  }
  const double t_setup = seconds_since(start);

  res.factors = factors::extract(res.panel, r, method);
  const double t_extract = seconds_since(start);
  res.basis = wavelet::evaluate_basis(family, resolution_for(cfg, res.panel.T()), res.panel.T());
  res.fit = gls::fit_iterative(res.panel, res.factors, res.basis, opts);
  const double t_fit = seconds_since(start);

  res.report = {{"command", "estimate"},
                {"parameters", config_to_json(cfg)},
                {"input", {{"path", fs::absolute(input).lexically_normal().string()},
                           {"sha256", sha256_hex(csv::slurp(input))},
                           {"T", raw.T()},
                           {"N", raw.N()}}},
                {"T", res.panel.T()},
                {"N", res.panel.N()},
                {"r", r},
                {"r_selected", !cfg.r.has_value()},
                {"selection", selection},
                {"method", factors::method_name(method)},
                {"family", wavelet::family_name(family)},
                {"J", res.basis.J},
                {"eigenvalues", to_vector(full_spectrum(res.panel, method))},
                {"n_iter", res.fit.n_iter},
                {"deltas", res.fit.deltas},
                {"converged", res.fit.converged},
                {"series_ids", res.panel.series_ids},
                {"standardization", {{"means", to_vector(res.panel.means)}, {"sds", to_vector(res.panel.sds)}}},
                {"timings_s", {{"setup", t_setup}, {"extract", t_extract - t_setup}, {"fit", t_fit - t_extract}}}};
  return res;
}

inline int cmd_estimate(const RunConfig& cfg) {
  const std::string out_dir = required_output(cfg);
  EstimateResult res = run_estimate(cfg);
  ArtifactWriter out(out_dir);
  out.write("factors.csv", factors_csv(res.panel, res.factors));
  out.write("loadings.csv", loadings_csv(res.panel, res.fit.Lambda));
  out.write("coefficients.csv", coefficients_csv(res.panel, res.fit.beta, res.basis));
  out.write("residual_cov.csv", matrix_csv(res.fit.Gamma_e, res.panel.series_ids));
  out.write_json("run_report.json", res.report);
  out.finish();
  std::cout << "estimate: r=" << res.factors.r() << " J=" << res.basis.J << " iterations=" << res.fit.n_iter
            << (res.fit.converged ? "" : " (not converged)") << " -> " << out_dir << '\n';
  return 0;
}

/// An estimate run directory loaded back from disk.
struct LoadedEstimate {
  json report;
  Panel panel;
  factors::FactorEstimate factors;
  wavelet::Basis basis;
  gls::GlsFit fit;
  gls::FitOptions fit_options;
};

inline json read_json_file(const std::string& path) {
  const std::string text = csv::slurp(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& ex) {
    fail(ErrorKind::Parse, "'" + path + "': " + ex.what());
  }
}

inline factors::Method parse_method(const std::string& name) {
  if (name == "PCA") return factors::Pca{};
  factors::GeneralizedCovariance g;
  require(std::sscanf(name.c_str(), "GeneralizedCovariance(%d,%d,%d)", &g.k, &g.d, &g.dprime) == 3, ErrorKind::Parse,
          "unknown factor method '" + name + "'");
  return g;
}

inline LoadedEstimate load_estimate(const std::string& dir) {
  const fs::path root(dir);
  const std::string report_path = (root / "run_report.json").string();
  require(fs::exists(report_path), ErrorKind::Io, "'" + dir + "' is not an estimate run directory (no run_report.json)");
  LoadedEstimate le;
  le.report = read_json_file(report_path);
  try {
    require(le.report.at("command").get<std::string>() == "estimate", ErrorKind::Parse,
            "'" + report_path + "' does not describe an estimate run");
    const std::string panel_path = le.report.at("input").at("path").get<std::string>();
    require(sha256_hex(csv::slurp(panel_path)) == le.report.at("input").at("sha256").get<std::string>(), ErrorKind::Io,
            "panel '" + panel_path + "' changed since the estimate run");
    const bool fd = le.report.at("parameters").at("first_difference").get<bool>();
    le.panel = prepare_panel(read_panel_csv(panel_path), fd);
    const int r = le.report.at("r").get<int>();
    const int J = le.report.at("J").get<int>();
    const auto family = wavelet::parse_family(le.report.at("family").get<std::string>());
    le.factors.method = parse_method(le.report.at("method").get<std::string>());
    le.factors.F = read_factors_csv((root / "factors.csv").string(), le.panel.T());
    require(le.factors.r() == r, ErrorKind::Shape, "factors.csv does not have r columns");
    le.basis = wavelet::evaluate_basis(family, J, le.panel.T());
    le.fit.beta = read_coefficients_csv((root / "coefficients.csv").string(), le.panel, r, le.basis);
    le.fit.Lambda = gls::loadings_from_coeffs(le.fit.beta, le.basis);
    le.fit.Gamma_e = gls::residual_cov(le.panel, le.fit.Lambda, le.factors);
    le.fit_options.delta = le.report.at("parameters").at("delta").get<double>();
    le.fit_options.max_iter = le.report.at("parameters").at("max_iter").get<int>();
  } catch (const json::exception& ex) {
    fail(ErrorKind::Parse, "'" + report_path + "': " + ex.what());
  }
  return le;
}

// ---------------------------------------------------------------------------
// bootstrap

inline int cmd_bootstrap(const RunConfig& cfg) {
  require(cfg.level > 0.0 && cfg.level < 1.0, ErrorKind::Parameter, "--level must lie in (0, 1)");
  require(cfg.B >= 2, ErrorKind::Parameter, "--B must be at least 2");
  const auto start = std::chrono::steady_clock::now();
  const std::string input = required_input(cfg);
  const LoadedEstimate le = load_estimate(input);
  const fs::path out_dir = cfg.output_dir.empty() ? fs::path(input) / "bootstrap" : fs::path(cfg.output_dir);

  bootstrap::BootstrapOptions opts;
  opts.threads = resolve_threads(cfg.threads);
  opts.fit = le.fit_options;
  const auto draws = bootstrap::draw(le.panel, le.fit, le.factors, le.basis, cfg.B, cfg.seed, opts);
  const auto set = bootstrap::bands(draws, le.fit, le.basis, cfg.level);

  ArtifactWriter out(out_dir);
  std::ostringstream bands;
  bootstrap::write_bands_csv(bands, set, le.panel.series_ids);
  out.write("bands.csv", bands.str());
  for (int m = 0; m < le.panel.N(); ++m) {
    for (int n = 0; n < le.factors.r(); ++n) {
      std::ostringstream curve;
      bootstrap::write_curve_csv(curve, set, m, n);
      out.write("plot/curve_" + le.panel.series_ids[static_cast<std::size_t>(m)] + "_f" + std::to_string(n + 1) + ".csv",
                curve.str());
    }
  }
  out.write_json("run_report.json", {{"command", "bootstrap"},
                                     {"parameters", config_to_json(cfg)},
                                     {"estimate_dir", fs::absolute(input).lexically_normal().string()},
                                     {"B", cfg.B},
                                     {"level", cfg.level},
                                     {"seed", cfg.seed},
                                     {"failed_draws", draws.failed},
                                     {"timings_s", {{"total", seconds_since(start)}}}});
  out.finish();
  std::cout << "bootstrap: B=" << cfg.B << " level=" << cfg.level << " failed=" << draws.failed.size() << " -> "
            << out_dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// select-r

inline int cmd_select_r(const RunConfig& cfg) {
  const std::string out_dir = required_output(cfg);
  const std::string input = required_input(cfg);
  const Panel raw = read_panel_csv(input);
  factors::SelectionOptions opts;
  opts.r_max = cfg.r_max;
  opts.first_difference = cfg.first_difference;
  const Panel panel = cfg.first_difference ? raw : standardize(raw);
  const auto sel = factors::select_num_factors(panel, opts);

  ArtifactWriter out(out_dir);
  out.write_json("selection.json", selection_to_json(sel));
  out.write_json("run_report.json", {{"command", "select-r"},
                                     {"parameters", config_to_json(cfg)},
                                     {"input", {{"path", fs::absolute(input).lexically_normal().string()},
                                                {"sha256", sha256_hex(csv::slurp(input))}}},
                                     {"r", sel.r}});
  out.finish();
  std::cout << "select-r: r=" << sel.r << " -> " << out_dir << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// simulate

inline std::string median_path_csv(const sim::ReplicationOutput& out) {
  const auto& truth = out.data->Lambda_true;
  const auto& est = out.fit->Lambda;
  std::vector<std::pair<int, int>> curves;
  if (truth.N() >= 12) curves.emplace_back(11, 0);
  if (truth.N() >= 8 && truth.r() >= 2) curves.emplace_back(7, 1);
  if (curves.empty()) curves.emplace_back(0, 0);
  std::ostringstream os;
  os << "t,series,factor,lambda_true,lambda_hat\n";
  for (const auto& [m, n] : curves) {
    for (int t = 0; t < truth.T(); ++t) {
      os << t + 1 << ',' << m + 1 << ',' << n + 1 << ',' << csv::fmt(truth(t, m, n)) << ',' << csv::fmt(est(t, m, n)) << '\n';
    }
  }
  return os.str();
}

inline int cmd_simulate(const RunConfig& cfg) {
  const std::string out_dir = required_output(cfg);
  const int reps = cfg.reps.value_or(100);
  require(reps >= 1, ErrorKind::Parameter, "--reps must be at least 1");
  const gls::FitOptions fit_opts = fit_options(cfg);
  const int threads = resolve_threads(cfg.threads);

  std::vector<sim::ExperimentCell> cells = cfg.input.empty() ? sim::default_grid() : sim::parse_grid(csv::slurp(cfg.input), cfg.input);
  if (cfg.family) {
    for (auto& cell : cells) cell.family = wavelet::parse_family(*cfg.family);
  }

  std::vector<sim::ExperimentReport> reports;
  json cell_reports = json::array();
  json grid = json::array();
  ArtifactWriter out(out_dir);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& cell = cells[c];
    grid.push_back(sim::cell_to_json(cell));
    reports.push_back(sim::run_experiment(cell.config, cell.family, reps, cfg.seed, threads, fit_opts));
    const auto& rep = reports.back();
    cell_reports.push_back({{"cell", c},
                            {"config", grid.back()},
                            {"J", rep.J},
                            {"method", factors::method_name(sim::extraction_method(cell.config))},
                            {"mean_r2", rep.mean_r2},
                            {"median_mse", rep.median_mse},
                            {"median_replication", rep.median_replication},
                            {"n_failed", rep.n_failed}});
    if (cfg.median_paths) {
      out.write("median_paths/cell_" + std::to_string(c) + ".csv", median_path_csv(sim::median_path_fit(rep, fit_opts)));
    }
    std::cout << "cell " << c + 1 << '/' << cells.size() << ": N=" << cell.config.N << " T=" << cell.config.T
              << " theta=" << sim::theta_label(cell.config.theta) << ' ' << sim::noise_cov_label(cell.config.noise_cov) << ' '
              << wavelet::family_name(cell.family) << " r2=" << rep.mean_r2 << " mse_m=" << rep.median_mse << std::endl;
  }

  std::ostringstream table;
  sim::write_table_csv(table, reports);
  out.write("table1.csv", table.str());
  std::ostringstream detail;
  sim::write_replications_csv(detail, reports);
  out.write("replications.csv", detail.str());
  out.write_json("grid.json", grid);
  // No timings here: identical invocations must give identical reports.
  out.write_json("run_report.json",
                 {{"command", "simulate"}, {"parameters", config_to_json(cfg)}, {"reps", reps}, {"cells", cell_reports}});
  out.finish();
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

inline void add_shared_flags(CLI::App& app, RunConfig& cfg) {
  app.add_option("--input", cfg.input, "Input file or run directory");
  app.add_option("--output-dir", cfg.output_dir, "Directory for artifacts");
  app.add_option("--seed", cfg.seed, "Random seed");
  app.add_option("--threads", cfg.threads, "Worker threads (default: TVLOAD_THREADS or all cores)")->check(CLI::NonNegativeNumber);
  app.add_option("--family", cfg.family, "Wavelet family")->check(CLI::IsMember({"haar", "d8"}));
  app.add_option("--J", cfg.J, "Resolution level override");
  app.add_option("--delta", cfg.delta, "Convergence tolerance");
  app.add_option("--max-iter", cfg.max_iter, "Maximum GLS iterations");
  app.add_flag("--nonstationary", cfg.nonstationary, "Use generalized covariance factors");
  app.add_option("--k", cfg.k, "Lag of the generalized covariance");
  app.add_option("--d", cfg.d, "Integration order");
  app.add_option("--dprime", cfg.dprime, "Extra normalization exponent (0 or 1)");
  app.add_flag("--first-difference", cfg.first_difference, "Difference the panel first");
  app.add_option("--r", cfg.r, "Number of factors (default: select)");
  app.add_option("--r-max", cfg.r_max, "Largest r considered by selection");
  app.add_option("--B", cfg.B, "Bootstrap replications");
  app.add_option("--level", cfg.level, "Bootstrap band coverage");
  app.add_option("--reps", cfg.reps, "Replications per simulation cell");
  app.add_flag("--median-paths", cfg.median_paths, "Write median-path loading curves per cell");
}

inline void print_error(std::string_view kind, const std::string& message) {
  std::cerr << json{{"status", "error"}, {"kind", kind}, {"message", message}}.dump() << std::endl;
}

inline int run_cli(int argc, char** argv) {
  CLI::App app{"Factor models with time-varying loadings"};
  app.require_subcommand(1);
  RunConfig cfg;
  const std::vector<std::pair<std::string, std::string>> commands = {
      {"estimate", "Extract factors and fit wavelet loadings"},
      {"select-r", "Select the number of factors"},
      {"simulate", "Run a Monte Carlo experiment grid"},
      {"bootstrap", "Residual bootstrap bands for an estimate run"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_shared_flags(*sub, cfg);
    sub->callback([&cfg, n = name] { cfg.command = n; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(to_string(ErrorKind::Parameter), e.what());
    return 1;
  }
  try {
    if (cfg.command == "estimate") return cmd_estimate(cfg);
    if (cfg.command == "select-r") return cmd_select_r(cfg);
    if (cfg.command == "simulate") return cmd_simulate(cfg);
    return cmd_bootstrap(cfg);
  } catch (const Error& e) {
    print_error(to_string(e.kind()), e.what());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
  }
  return 1;
}

}  // namespace tvload::cli
