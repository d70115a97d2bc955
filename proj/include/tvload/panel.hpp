#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "tvload/csv.hpp"
#include "tvload/error.hpp"

namespace tvload {

/// T x N observations, one column per series.
struct Panel {
  Eigen::MatrixXd values;
  std::vector<std::string> series_ids;
  std::vector<std::string> time_labels;
  Eigen::VectorXd means;  // original column means (set by standardize)
  Eigen::VectorXd sds;    // original column sample sds (set by standardize)
  bool standardized = false;

  [[nodiscard]] int T() const noexcept { return static_cast<int>(values.rows()); }
  [[nodiscard]] int N() const noexcept { return static_cast<int>(values.cols()); }

  static Panel from_matrix(Eigen::MatrixXd values) {
    Panel p;
    p.values = std::move(values);
    p.series_ids.reserve(static_cast<std::size_t>(p.values.cols()));
    for (Eigen::Index i = 0; i < p.values.cols(); ++i) p.series_ids.push_back("s" + std::to_string(i + 1));
    for (Eigen::Index t = 0; t < p.values.rows(); ++t) p.time_labels.push_back(std::to_string(t + 1));
    p.means = Eigen::VectorXd::Zero(p.values.cols());
    p.sds = Eigen::VectorXd::Ones(p.values.cols());
    return p;
  }
};

namespace detail {
inline constexpr double kStandardizedTol = 1e-10;
}

inline bool is_standardized(const Eigen::MatrixXd& y) {
  const double T = static_cast<double>(y.rows());
  for (Eigen::Index i = 0; i < y.cols(); ++i) {
    const double mean = y.col(i).mean();
    const double sd = std::sqrt((y.col(i).array() - mean).square().sum() / (T - 1.0));
    if (std::abs(mean) > detail::kStandardizedTol || std::abs(sd - 1.0) > detail::kStandardizedTol) {
      return false;
    }
  }
  return true;
}

/// Centers each column and scales it to unit sample sd (T-1 denominator).
/// A panel that is already standardized is returned with unchanged values.
inline Panel standardize(const Panel& panel) {
  require(panel.T() >= 2 && panel.N() >= 1, ErrorKind::Shape, "panel needs T >= 2 and N >= 1");
  Panel out = panel;
  out.standardized = true;
  if (is_standardized(panel.values)) {
    if (!panel.standardized) {
      out.means = Eigen::VectorXd::Zero(panel.N());
      out.sds = Eigen::VectorXd::Ones(panel.N());
    }
    return out;
  }
  const double T = panel.T();
  out.means.resize(panel.N());
  out.sds.resize(panel.N());
  for (int i = 0; i < panel.N(); ++i) {
    const double mean = panel.values.col(i).mean();
    const double sd = std::sqrt((panel.values.col(i).array() - mean).square().sum() / (T - 1.0));
    const double scale = std::max(1.0, std::abs(mean));
    if (!(sd > 1e-14 * scale)) {
      const std::string id = i < static_cast<int>(panel.series_ids.size()) ? panel.series_ids[static_cast<std::size_t>(i)]
                                                                          : std::to_string(i + 1);
      fail(ErrorKind::DegenerateSeries, "series '" + id + "' is constant and cannot be standardized");
    }
    out.means(i) = mean;
    out.sds(i) = sd;
    out.values.col(i) = (panel.values.col(i).array() - mean) / sd;
  }
  return out;
}

/// Y_t - Y_{t-1}; drops the first observation and clears the standardized flag.
inline Panel first_difference(const Panel& panel) {
  require(panel.T() >= 3, ErrorKind::Shape, "first differencing needs T >= 3");
  Panel out;
  const int T = panel.T();
  out.values = panel.values.bottomRows(T - 1) - panel.values.topRows(T - 1);
  out.series_ids = panel.series_ids;
  if (panel.time_labels.size() == static_cast<std::size_t>(T)) {
    out.time_labels.assign(panel.time_labels.begin() + 1, panel.time_labels.end());
  }
  out.means = Eigen::VectorXd::Zero(panel.N());
  out.sds = Eigen::VectorXd::Ones(panel.N());
  return out;
}

/// Panel CSV: header `t,<id>,<id>,...`; first column is a time label
/// (integer or ISO date). Missing or non-numeric cells are rejected.
inline Panel read_panel_csv(const std::string& path) {
  const csv::Table table = csv::read_table(path);
  require(table.header.size() >= 2, ErrorKind::Parse,
          "panel '" + path + "' needs a time column and at least one series");
  const std::size_t n_series = table.header.size() - 1;
  Panel p;
  p.series_ids.assign(table.header.begin() + 1, table.header.end());
  for (auto& id : p.series_ids) id = std::string(csv::trim(id));
  p.values.resize(static_cast<Eigen::Index>(table.rows.size()), static_cast<Eigen::Index>(n_series));
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    // Data rows are numbered from 2 because the header is line 1.
    require(row.size() == table.header.size(), ErrorKind::Parse,
            "panel '" + path + "' row " + std::to_string(r + 2) + " has " + std::to_string(row.size()) +
                " fields, expected " + std::to_string(table.header.size()));
    p.time_labels.emplace_back(csv::trim(row[0]));
    for (std::size_t c = 0; c < n_series; ++c) {
      double v = 0.0;
      if (!csv::parse_double(row[c + 1], v) || !std::isfinite(v)) {
        fail(ErrorKind::Parse, "panel '" + path + "' has a missing or non-numeric value at row " +
                                   std::to_string(r + 2) + ", column " + std::to_string(c + 2) + " (series '" +
                                   p.series_ids[c] + "')");
      }
      p.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
    }
  }
  require(p.T() >= 2, ErrorKind::Shape, "panel '" + path + "' needs at least two observations");
  p.means = Eigen::VectorXd::Zero(p.N());
  p.sds = Eigen::VectorXd::Ones(p.N());
  return p;
}

inline void write_panel_csv(std::ostream& os, const Panel& panel) {
  os << 't';
  for (const auto& id : panel.series_ids) os << ',' << id;
  os << '\n';
  for (int t = 0; t < panel.T(); ++t) {
    os << (static_cast<std::size_t>(t) < panel.time_labels.size() ? panel.time_labels[static_cast<std::size_t>(t)]
                                                                   : std::to_string(t + 1));
    for (int i = 0; i < panel.N(); ++i) os << ',' << csv::fmt(panel.values(t, i));
    os << '\n';
  }
}

}  // namespace tvload
