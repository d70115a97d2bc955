#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "test_util.hpp"
#include "tvload/sim.hpp"
#include "tvload/sim_json.hpp"

using namespace tvload;
using namespace tvload::sim;

namespace {

double lag1_autocorr(const Eigen::VectorXd& x) {
  const Eigen::VectorXd z = x.array() - x.mean();
  const auto n = z.size();
  return z.head(n - 1).dot(z.tail(n - 1)) / z.squaredNorm();
}

}  // namespace

TEST(NoiseCov, Toeplitz) {
  Eigen::MatrixXd expected(3, 3);
  expected << 1, 0.7, 0.49, 0.7, 1, 0.7, 0.49, 0.7, 1;
  EXPECT_LE(tvtest::max_abs(gen_noise_cov(Toeplitz{0.7}, 3, 1) - expected), 1e-15);
  EXPECT_EQ(gen_noise_cov(Toeplitz{0.0}, 5, 1), Eigen::MatrixXd::Identity(5, 5));
  EXPECT_TVLOAD_ERROR(gen_noise_cov(Toeplitz{1.0}, 3, 1), ErrorKind::Parameter);
}

TEST(NoiseCov, DiagonalUniform) {
  const Eigen::MatrixXd g = gen_noise_cov(DiagonalUniform{0.5, 1.5}, 50, 3);
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 50; ++j) {
      if (i == j) {
        EXPECT_GE(g(i, i), 0.5);
        EXPECT_LE(g(i, i), 1.5);
      } else {
        EXPECT_EQ(g(i, j), 0.0);
      }
    }
  }
  EXPECT_EQ(g, gen_noise_cov(DiagonalUniform{0.5, 1.5}, 50, 3));
  EXPECT_NE(g, gen_noise_cov(DiagonalUniform{0.5, 1.5}, 50, 4));
  EXPECT_TVLOAD_ERROR(gen_noise_cov(DiagonalUniform{1.5, 0.5}, 3, 1), ErrorKind::Parameter);
}

TEST(Loadings, FigureFunctions) {
  EXPECT_NEAR(figure_loading_1_12()(0.0), 0.4, 1e-15);
  const double expected = 0.42 - 0.3 * std::sin(1.2 * std::numbers::pi);
  EXPECT_NEAR(figure_loading_2_8()(1.0), expected, 1e-15);
  EXPECT_NEAR(expected, 0.5964, 1e-4);
  const Eigen::VectorXd c = loading_library(make_loading("constant", {{"level", 1.3}}), 16);
  EXPECT_TRUE((c.array() == 1.3).all());
}

TEST(Loadings, RegistryErrors) {
  EXPECT_TVLOAD_ERROR(make_loading("wiggle"), ErrorKind::Registry);
  EXPECT_TVLOAD_ERROR(loading_library(LoadingFunction{"wiggle", {}}, 8), ErrorKind::Registry);
  for (const auto& name : loading_registry()) EXPECT_TRUE(std::isfinite(make_loading(name)(0.5))) << name;
}

TEST(Loadings, DefaultSpecPinsFigureFunctions) {
  const auto spec = default_loading_spec(20, 2);
  EXPECT_EQ(spec.size(), 40u);
  EXPECT_EQ(spec.at({11, 0}).name, "cosine");
  EXPECT_EQ(spec.at({11, 0}).params, figure_loading_1_12().params);
  EXPECT_EQ(spec.at({7, 1}).params, figure_loading_2_8().params);
}

TEST(SimulateDgp, IdentityHoldsExactly) {
  DgpConfig cfg;
  cfg.noise_cov = Toeplitz{0.7};
  const SimulatedDataset ds = simulate_dgp(cfg);
  for (int t = 0; t < cfg.T; ++t) {
    for (int i = 0; i < cfg.N; ++i) {
      double x = ds.e(t, i);
      for (int n = 0; n < cfg.r; ++n) x += ds.Lambda_true(t, i, n) * ds.F_true(t, n);
      EXPECT_NEAR(ds.Y(t, i), x, 1e-12);
    }
  }
}

TEST(SimulateDgp, DeterministicUnderSeed) {
  DgpConfig cfg;
  cfg.seed = 42;
  const SimulatedDataset a = simulate_dgp(cfg);
  const SimulatedDataset b = simulate_dgp(cfg);
  EXPECT_EQ(a.Y, b.Y);
  EXPECT_EQ(a.F_true, b.F_true);
  cfg.seed = 43;
  EXPECT_NE(a.Y, simulate_dgp(cfg).Y);
}

TEST(SimulateDgp, WhiteNoiseFactorsUncorrelated) {
  DgpConfig cfg;
  cfg.T = 2048;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const SimulatedDataset ds = simulate_dgp(cfg);
    for (int k = 0; k < 2; ++k) EXPECT_LE(std::abs(lag1_autocorr(ds.F_true.col(k))), 0.1);
  }
}

TEST(SimulateDgp, ArFactorsAutocorrelated) {
  DgpConfig cfg;
  cfg.T = 2048;
  cfg.theta = {0.5, 0.5};
  const SimulatedDataset ds = simulate_dgp(cfg);
  for (int k = 0; k < 2; ++k) EXPECT_NEAR(lag1_autocorr(ds.F_true.col(k)), 0.5, 0.1);
}

TEST(SimulateDgp, RandomWalkVarianceGrows) {
  // Var(F_t) = t·σ² for a random walk from zero: the ensemble variance over the
  // last quarter is about 7 times that over the first. Per path, the last-quarter
  // mean square exceeds the first-quarter one with probability about 0.82.
  DgpConfig cfg;
  cfg.theta = {1.0, 1.0};
  const int seeds = 100;
  const int q = cfg.T / 4;
  std::array<Eigen::ArrayXd, 2> sum_sq = {Eigen::ArrayXd::Zero(cfg.T), Eigen::ArrayXd::Zero(cfg.T)};
  std::array<int, 2> growing = {0, 0};
  for (int seed = 1; seed <= seeds; ++seed) {
    cfg.seed = static_cast<std::uint64_t>(seed);
    const SimulatedDataset ds = simulate_dgp(cfg);
    for (std::size_t k = 0; k < 2; ++k) {
      const Eigen::ArrayXd col = ds.F_true.col(static_cast<Eigen::Index>(k)).array();
      sum_sq[k] += col.square();
      if (col.head(q).square().mean() < col.tail(q).square().mean()) ++growing[k];
    }
  }
  for (std::size_t k = 0; k < 2; ++k) {
    const double early = sum_sq[k].head(q).mean() / seeds;
    const double late = sum_sq[k].tail(q).mean() / seeds;
    EXPECT_GT(late / early, 4.0) << "factor " << k;
    EXPECT_LT(late / early, 12.0) << "factor " << k;
    EXPECT_GE(growing[k], 70) << "factor " << k;
  }
}

TEST(SimulateDgp, RandomWalkStartsAtZero) {
  DgpConfig cfg;
  cfg.theta = {1.0, 1.0};
  const SimulatedDataset ds = simulate_dgp(cfg);
  // With F_0 = 0 and no burn-in, |F_1| is a single innovation.
  EXPECT_LE(std::abs(ds.F_true(0, 0)), 5 * 0.9);
}

TEST(SimulateDgp, NoiseScaleZeroIsNoiseless) {
  DgpConfig cfg;
  cfg.noise_scale = 0.0;
  const SimulatedDataset ds = simulate_dgp(cfg);
  EXPECT_EQ(ds.e.cwiseAbs().maxCoeff(), 0.0);
}

TEST(SimulateDgp, ConfigErrors) {
  DgpConfig cfg;
  cfg.theta = {1.2, 0.0};
  EXPECT_TVLOAD_ERROR(simulate_dgp(cfg), ErrorKind::Parameter);
  cfg.theta = {0.0};
  EXPECT_TVLOAD_ERROR(simulate_dgp(cfg), ErrorKind::Parameter);
  cfg = DgpConfig{};
  cfg.factor_innovation_sds = {1.0, 0.5};
  EXPECT_TVLOAD_ERROR(simulate_dgp(cfg), ErrorKind::Parameter);
  cfg = DgpConfig{};
  cfg.noise_cov = Toeplitz{-1.0};
  EXPECT_TVLOAD_ERROR(simulate_dgp(cfg), ErrorKind::Parameter);
  cfg = DgpConfig{};
  cfg.loading_spec[{25, 0}] = make_loading("constant");
  EXPECT_TVLOAD_ERROR(simulate_dgp(cfg), ErrorKind::Parameter);
}

TEST(Experiment, ExtractionMethodFollowsTheta) {
  DgpConfig cfg;
  EXPECT_TRUE(std::holds_alternative<factors::Pca>(extraction_method(cfg)));
  cfg.theta = {0.5, 1.0};
  EXPECT_EQ(factors::method_name(extraction_method(cfg)), "GeneralizedCovariance(1,1,1)");
}

TEST(Experiment, NoiselessConstantLoadingsRecovered) {
  DgpConfig cfg;
  cfg.noise_scale = 0.0;
  for (int i = 0; i < cfg.N; ++i) {
    for (int n = 0; n < cfg.r; ++n) cfg.loading_spec[{i, n}] = make_loading("constant", {{"level", 0.5 + 0.1 * i - 0.7 * n}});
  }
  const ExperimentReport rep = run_experiment(cfg, wavelet::Family::Haar, 5, 3);
  EXPECT_GE(rep.mean_r2, 0.999);
  EXPECT_LE(rep.median_mse, 1e-6);
}

TEST(Experiment, ScheduleIndependent) {
  DgpConfig cfg;
  cfg.N = 10;
  cfg.T = 128;
  const ExperimentReport serial = run_experiment(cfg, wavelet::Family::Haar, 8, 5, 1);
  const ExperimentReport threaded = run_experiment(cfg, wavelet::Family::Haar, 8, 5, 3);
  ASSERT_EQ(serial.replications.size(), threaded.replications.size());
  for (std::size_t i = 0; i < serial.replications.size(); ++i) {
    EXPECT_EQ(serial.replications[i].r2, threaded.replications[i].r2);
    EXPECT_EQ(serial.replications[i].mse, threaded.replications[i].mse);
  }
  EXPECT_EQ(serial.median_replication, threaded.median_replication);
}

TEST(Experiment, MedianPathReproducesReplication) {
  DgpConfig cfg;
  cfg.N = 10;
  cfg.T = 128;
  const ExperimentReport rep = run_experiment(cfg, wavelet::Family::Daubechies8, 7, 9);
  const ReplicationOutput out = median_path_fit(rep);
  EXPECT_EQ(out.result.mse, rep.median_mse);
  ASSERT_TRUE(out.fit.has_value());
  EXPECT_EQ(out.fit->Lambda.T(), 128);
}

TEST(Experiment, DefaultGridShape) {
  const auto grid = default_grid();
  EXPECT_EQ(grid.size(), 108u);
  EXPECT_EQ(grid.front().config.N, 20);
  EXPECT_EQ(grid.front().family, wavelet::Family::Haar);
  EXPECT_EQ(grid.back().family, wavelet::Family::Daubechies8);
}

TEST(Experiment, TableCsv) {
  ExperimentReport rep;
  rep.mean_r2 = 0.5;
  rep.median_mse = 0.25;
  rep.config.theta = {0.5, 0.5};
  std::ostringstream os;
  write_table_csv(os, {rep});
  EXPECT_EQ(os.str(), "N,T,theta,cov,family,r2,mse_m\n20,512,0.5,Diag,haar,0.5,0.25\n");
}

TEST(GridJson, RoundTripAndErrors) {
  ExperimentCell cell;
  cell.config.N = 12;
  cell.config.T = 256;
  cell.config.theta = {0.5, 1.0};
  cell.config.noise_cov = Toeplitz{0.3};
  cell.family = wavelet::Family::Daubechies8;
  cell.config.loading_spec[{11, 0}] = figure_loading_1_12();
  const std::string text = nlohmann::json::array({cell_to_json(cell)}).dump();
  const auto cells = parse_grid(text, "inline");
  ASSERT_EQ(cells.size(), 1u);
  EXPECT_EQ(cell_to_json(cells[0]), cell_to_json(cell));

  try {
    parse_grid("[{\"N\": 20,\n \"T\": }]", "broken.json");
    FAIL() << "expected parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Parse);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_TVLOAD_ERROR(parse_grid("[{\"N\": 20, \"T\": 512, \"colour\": 1}]", "x"), ErrorKind::Parse);
  EXPECT_TVLOAD_ERROR(parse_grid("[]", "x"), ErrorKind::Parse);
  EXPECT_TVLOAD_ERROR(parse_grid("[{\"N\": 20, \"T\": 512, \"theta\": [2, 0]}]", "x"), ErrorKind::Parameter);
  EXPECT_TVLOAD_ERROR(parse_grid("[{\"N\": 20, \"T\": 512, \"loadings\": [{\"series\": 1, \"factor\": 1, \"name\": \"zz\"}]}]", "x"),
                      ErrorKind::Registry);
}
