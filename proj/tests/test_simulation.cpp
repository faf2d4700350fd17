#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include <gtest/gtest.h>

#include "fen/simulation.hpp"
#include "test_util.hpp"

using fen::DenseTensor;
using fen::index_t;
using fen::MaskTensor;
using fen::SimConfig;

TEST(Simulation, GenerateCoreOneByOneSliceIsSign) {
  DenseTensor b = fen::generate_core(1, 1, 1, 701);
  EXPECT_DOUBLE_EQ(std::abs(b.at(0, 0, 0, 0)), 1.0);
}

TEST(Simulation, GenerateCoreHasFullRanks) {
  DenseTensor b = fen::generate_core(3, 8, 2, 711);
  ASSERT_EQ(b.dims(), (std::vector<index_t>{3, 3, 8, 2}));
  const int want_rank[3] = {3, 3, 8};
  for (int mode = 1; mode <= 3; ++mode) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(fen::matricize(b, mode));
    const auto& sv = svd.singularValues();
    ASSERT_EQ(sv.size(), want_rank[mode - 1]);
    EXPECT_GT(sv(sv.size() - 1) / sv(0), 1e-8) << "mode " << mode;
  }
}

TEST(Simulation, GenerateCoreDeterministic) {
  DenseTensor a = fen::generate_core(3, 5, 2, 721);
  DenseTensor b = fen::generate_core(3, 5, 2, 721);
  EXPECT_EQ(fen::encode_tensor(a), fen::encode_tensor(b));
  DenseTensor c = fen::generate_core(3, 5, 2, 722);
  EXPECT_NE(fen::encode_tensor(a), fen::encode_tensor(c));
}

TEST(Simulation, GenerateCoreRejectsInfeasibleRank) {
  EXPECT_THROW(fen::generate_core(2, 5, 1, 731), std::invalid_argument);
}

TEST(Simulation, RandomOrthonormalFactorProperties) {
  Eigen::MatrixXd phi = fen::random_orthonormal_factor(7, 3, 741);
  EXPECT_LT((phi.transpose() * phi - Eigen::MatrixXd::Identity(3, 3))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);
  for (Eigen::Index j = 0; j < phi.cols(); ++j) {
    Eigen::Index arg;
    phi.col(j).cwiseAbs().maxCoeff(&arg);
    EXPECT_GE(phi(arg, j), 0.0);
  }

  Eigen::MatrixXd square = fen::random_orthonormal_factor(4, 4, 742);
  EXPECT_LT((square * square.transpose() - Eigen::MatrixXd::Identity(4, 4))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);

  Eigen::MatrixXd again = fen::random_orthonormal_factor(7, 3, 741);
  EXPECT_EQ((phi - again).cwiseAbs().maxCoeff(), 0.0);

  EXPECT_THROW(fen::random_orthonormal_factor(3, 4, 743),
               std::invalid_argument);
}

TEST(Simulation, FourierBasisHandExample) {
  Eigen::MatrixXd g = fen::fourier_basis(4, 1, -1.0, 1.0);
  const double r = 1.0 / std::sqrt(2.0);
  EXPECT_NEAR(g(0, 0), r, 1e-14);
  EXPECT_NEAR(g(1, 0), 0.0, 1e-14);
  EXPECT_NEAR(g(2, 0), -r, 1e-14);
  EXPECT_NEAR(g(3, 0), 0.0, 1e-14);
}

TEST(Simulation, FourierBasisOrthonormalAndNearRaw) {
  const index_t L = 200, K = 2;
  Eigen::MatrixXd g = fen::fourier_basis(L, K, -1.0, 1.0);
  EXPECT_LT((g.transpose() * g - Eigen::MatrixXd::Identity(K, K))
                .cwiseAbs()
                .maxCoeff(),
            1e-12);

  // sampled sine waves are nearly orthogonal already, so the
  // orthonormalization barely moves them
  const fen::TimeGrid grid{-1.0, 1.0, L};
  const double pi = std::acos(-1.0);
  for (index_t k = 0; k < K; ++k) {
    Eigen::VectorXd raw(L);
    for (index_t l = 0; l < L; ++l)
      raw(l) = std::sin(static_cast<double>(k + 1) * pi * grid.point(l));
    raw.normalize();
    Eigen::Index arg;
    raw.cwiseAbs().maxCoeff(&arg);
    if (raw(arg) < 0.0) raw = -raw;
    EXPECT_LT((g.col(k) - raw).norm(), 10.0 / static_cast<double>(L))
        << "column " << k;
  }
}

TEST(Simulation, FourierBasisDegenerateGridIsAnError) {
  // t = (0, 1) samples sin(pi t) to zero at both points
  EXPECT_THROW(fen::fourier_basis(2, 1, -1.0, 1.0), fen::SimulationError);
}

TEST(Simulation, AddNoiseBehaviour) {
  DenseTensor x = fentest::random_tensor({10, 10, 50, 5}, 751);
  EXPECT_EQ(fen::encode_tensor(fen::add_noise(x, 0.0, 752)),
            fen::encode_tensor(x));

  const double sigma2 = 0.1;
  DenseTensor y = fen::add_noise(x, sigma2, 753);
  fen::detail::CompensatedSum sum, sumsq;
  for (index_t i = 0; i < x.size(); ++i) {
    const double e = y[i] - x[i];
    sum.add(e);
    sumsq.add(e * e);
  }
  const double n = static_cast<double>(x.size());
  const double mean = sum.value() / n;
  const double var = sumsq.value() / n - mean * mean;
  EXPECT_LT(std::abs(var - sigma2) / sigma2, 0.05);

  EXPECT_EQ(fen::encode_tensor(fen::add_noise(x, sigma2, 753)),
            fen::encode_tensor(y));
}

TEST(Simulation, GenerateMaskExactCounts) {
  MaskTensor all = fen::generate_mask({4, 4, 5, 2}, 0.0, 761);
  EXPECT_EQ(all.observed_count(), all.size());

  MaskTensor m = fen::generate_mask({10, 10, 50, 5}, 0.4, 762);
  EXPECT_EQ(m.size(), 25000);
  EXPECT_EQ(m.observed_count(), 15000);

  MaskTensor again = fen::generate_mask({10, 10, 50, 5}, 0.4, 762);
  EXPECT_EQ(fen::encode_mask(again), fen::encode_mask(m));

  EXPECT_THROW(fen::generate_mask({2, 2, 2, 1}, 1.0, 763),
               std::invalid_argument);
}

TEST(Simulation, SeMetricsExamples) {
  DenseTensor x = fentest::random_tensor({3, 3, 4, 1}, 771);
  auto [f0, m0] = fen::se_metrics(x, x, MaskTensor::full(x.dims()));
  EXPECT_EQ(f0, 0.0);
  EXPECT_EQ(m0, 0.0);

  DenseTensor ones(x.dims(), 1.0);
  DenseTensor zeros(x.dims());
  MaskTensor mask = fen::generate_mask(x.dims(), 0.25, 772);
  const double q = static_cast<double>(mask.size() - mask.observed_count());
  auto [f1, m1] = fen::se_metrics(ones, zeros, mask);
  EXPECT_DOUBLE_EQ(f1, static_cast<double>(mask.size()));
  EXPECT_DOUBLE_EQ(m1, q);
  EXPECT_LE(m1, f1);
}

TEST(Simulation, InstanceTruthIsOnManifold) {
  SimConfig cfg;
  cfg.m = 8;
  cfg.L = 20;
  cfg.N = 3;
  cfg.s_true = 3;
  cfg.K_true = 5;
  fen::SimInstance inst = fen::generate_instance(cfg, 0.05, 0.2, 781);

  auto again = fen::shosvd(inst.truth->value(), cfg.s_true, cfg.K_true);
  EXPECT_LT(fentest::rel_fro_err(again->value(), inst.truth->value()), 1e-9);

  const index_t hidden = inst.mask.size() - inst.mask.observed_count();
  EXPECT_EQ(hidden, std::llround(0.2 * static_cast<double>(inst.mask.size())));
}

TEST(Simulation, RunExperimentExactRecoveryCell) {
  SimConfig cfg;
  cfg.m = 6;
  cfg.L = 12;
  cfg.N = 2;
  cfg.s_true = 3;
  cfg.K_true = 4;
  cfg.sigma2 = {0.0};
  cfg.omega = {0.0};
  cfg.alpha = 0.0;
  cfg.replications = 1;
  cfg.seed = 791;
  cfg.fit.s = 3;
  cfg.fit.K = 4;
  cfg.fit.max_iter = 100;

  auto rows = fen::run_experiment(cfg);
  ASSERT_EQ(rows.size(), 1u);
  const auto& row = rows[0];
  ASSERT_EQ(row.se_full.size(), 1u);
  EXPECT_FALSE(row.failed[0]);
  EXPECT_TRUE(row.converged[0]);
  // exact recovery: the error is numerically zero relative to the scale
  EXPECT_LE(row.se_full[0], 1e-10);
  EXPECT_LE(row.se_miss[0], row.se_full[0]);
}

TEST(Simulation, RunExperimentDeterministic) {
  SimConfig cfg;
  cfg.m = 6;
  cfg.L = 12;
  cfg.N = 2;
  cfg.s_true = 2;
  cfg.K_true = 3;
  cfg.sigma2 = {0.05};
  cfg.omega = {0.2};
  cfg.alpha = 0.1;
  cfg.replications = 2;
  cfg.seed = 801;
  cfg.fit.s = 2;
  cfg.fit.K = 3;
  cfg.fit.max_iter = 60;

  auto r1 = fen::run_experiment(cfg);
  auto r2 = fen::run_experiment(cfg);
  EXPECT_EQ(fen::results_csv_text(r1), fen::results_csv_text(r2));
  ASSERT_EQ(r1.size(), 1u);
  EXPECT_EQ(r1[0].mse_mean, r2[0].mse_mean);
  EXPECT_EQ(r1[0].mse_std, r2[0].mse_std);
}

TEST(Simulation, RunExperimentMseGrowsWithMissingness) {
  SimConfig cfg;
  cfg.m = 10;
  cfg.L = 50;
  cfg.N = 5;
  cfg.s_true = 3;
  cfg.K_true = 8;
  cfg.sigma2 = {0.01};
  cfg.omega = {0.1, 0.4};
  cfg.alpha = 0.1;
  cfg.replications = 3;
  cfg.seed = 811;
  cfg.fit.s = 3;
  cfg.fit.K = 8;
  cfg.fit.max_iter = 150;

  auto rows = fen::run_experiment(cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].omega, 0.1);
  EXPECT_DOUBLE_EQ(rows[1].omega, 0.4);
  for (const auto& row : rows)
    for (std::size_t r = 0; r < row.failed.size(); ++r)
      EXPECT_FALSE(row.failed[r]);
  EXPECT_GT(rows[1].mse_mean, rows[0].mse_mean);
}

TEST(Simulation, FailedReplicationIsRecordedNotFatal) {
  SimConfig cfg;
  cfg.m = 5;
  cfg.L = 8;
  cfg.N = 1;
  cfg.s_true = 2;
  cfg.K_true = 2;
  cfg.replications = 2;
  cfg.seed = 821;
  cfg.fit.s = 2;
  cfg.fit.K = 2;
  cfg.fit.init = fen::InitScheme::provided;  // no init_point: every rep fails

  auto rows = fen::run_experiment(cfg);
  ASSERT_EQ(rows.size(), 1u);
  const auto& row = rows[0];
  ASSERT_EQ(row.failed.size(), 2u);
  EXPECT_TRUE(row.failed[0]);
  EXPECT_TRUE(row.failed[1]);
  EXPECT_TRUE(std::isnan(row.se_full[0]));
  EXPECT_TRUE(std::isnan(row.mse_mean));
  EXPECT_FALSE(row.converged[0]);
}

TEST(Simulation, ResultsCsvShape) {
  SimConfig cfg;
  cfg.m = 5;
  cfg.L = 8;
  cfg.N = 1;
  cfg.s_true = 2;
  cfg.K_true = 2;
  cfg.sigma2 = {0.0, 0.1};
  cfg.omega = {0.1};
  cfg.alpha = 0.0;
  cfg.replications = 2;
  cfg.seed = 831;
  cfg.fit.s = 2;
  cfg.fit.K = 2;
  cfg.fit.max_iter = 30;

  auto rows = fen::run_experiment(cfg);
  const std::string csv = fen::results_csv_text(rows);
  std::istringstream in(csv);
  std::string line;
  ASSERT_TRUE(std::getline(in, line));
  EXPECT_EQ(line, "sigma2,omega,rep,se_full,se_miss,iterations,converged");
  int data_lines = 0;
  while (std::getline(in, line)) {
    ++data_lines;
    EXPECT_EQ(std::count(line.begin(), line.end(), ','), 6) << line;
  }
  EXPECT_EQ(data_lines, 4);
}

TEST(Simulation, TraceSvgWellFormed) {
  DenseTensor y = fentest::random_tensor({4, 4, 6, 1}, 841);
  MaskTensor mask = fen::generate_mask(y.dims(), 0.3, 842);
  fen::Problem prob(y, mask, fen::SmoothingPenalty::uniform(0.1, 6),
                    fen::TimeGrid{-1.0, 1.0, 6});
  fen::FitConfig fit_cfg;
  fit_cfg.s = 2;
  fit_cfg.K = 2;
  fit_cfg.max_iter = 10;
  auto [point, report] = fen::fit(prob, fit_cfg);

  const std::string svg = fen::trace_svg_text(report);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(svg.find("log10 objective"), std::string::npos);
  EXPECT_EQ(svg.substr(svg.size() - 7), "</svg>\n");
}

TEST(Simulation, ConfigValidation) {
  SimConfig cfg;
  cfg.fit.s = 3;
  cfg.fit.K = 8;

  SimConfig bad = cfg;
  bad.K_true = 10;  // exceeds s_true^2 = 9
  EXPECT_THROW(fen::run_experiment(bad), std::invalid_argument);

  bad = cfg;
  bad.omega = {1.0};
  EXPECT_THROW(fen::run_experiment(bad), std::invalid_argument);

  bad = cfg;
  bad.sigma2 = {};
  EXPECT_THROW(fen::run_experiment(bad), std::invalid_argument);

  bad = cfg;
  bad.replications = 0;
  EXPECT_THROW(fen::run_experiment(bad), std::invalid_argument);

  bad = cfg;
  bad.alpha = -0.1;
  EXPECT_THROW(fen::run_experiment(bad), std::invalid_argument);
}
