#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include "fen/analysis.hpp"
#include "fen/objective.hpp"
#include "fen/optimizer.hpp"
#include "fen/simulation.hpp"
#include "test_util.hpp"

namespace {

using fen::DenseTensor;
using fen::MaskTensor;
using fen::index_t;

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

TEST(Analysis, FullMaskConstantsAreOne) {
  auto p = fentest::random_point(6, 2, 8, 3, 2, 7);
  MaskTensor full = MaskTensor::full(p->value().dims());
  auto [c, C] = fen::estimate_mask_constants(p->value(), full, 2, 3, 10, 19);
  EXPECT_NEAR(c, 1.0, 1e-14);
  EXPECT_NEAR(C, 1.0, 1e-14);
}

TEST(Analysis, MaskConstantsLieBetweenZeroAndOne) {
  auto p = fentest::random_point(6, 2, 8, 3, 2, 31);
  MaskTensor mask = fen::generate_mask({6, 6, 8, 2}, 0.4, 99);
  auto [c, C] = fen::estimate_mask_constants(p->value(), mask, 2, 3, 25, 19);
  EXPECT_GT(c, 0.0);
  EXPECT_LE(c, C);
  EXPECT_LE(C, 1.0 + 1e-12);
}

TEST(Analysis, MaskConstantsGrowWithMoreObservations) {
  auto p = fentest::random_point(6, 2, 8, 3, 2, 43);
  MaskTensor sparse = fen::generate_mask({6, 6, 8, 2}, 0.5, 17);
  MaskTensor denser = sparse;
  for (index_t flat = 0; flat < denser.size() / 2; ++flat)
    denser.set(flat, true);
  ASSERT_GT(denser.observed_count(), sparse.observed_count());

  auto [c1, C1] = fen::estimate_mask_constants(p->value(), sparse, 2, 3, 25, 5);
  auto [c2, C2] = fen::estimate_mask_constants(p->value(), denser, 2, 3, 25, 5);
  EXPECT_GE(c2, c1 - 1e-12);
  EXPECT_GE(C2, C1 - 1e-12);
}

TEST(Analysis, MaskConstantsAtModerateMissingnessStayInformative) {
  fen::SimConfig cfg;
  cfg.seed = 20260816;
  fen::SimInstance inst = fen::generate_instance(cfg, 0.0, 0.4,
                                                 fen::derive_seed(cfg.seed, 1));
  auto [c, C] = fen::estimate_mask_constants(inst.truth->value(), inst.mask,
                                             cfg.s_true, cfg.K_true, 100, 3);
  // random differences spread energy evenly, so the visible share of their
  // norm concentrates near sqrt(observed fraction) = sqrt(0.6)
  EXPECT_GT(c, 0.6);
  EXPECT_LT(C, 0.9);
  ::testing::Test::RecordProperty("c_hat", std::to_string(c));
  ::testing::Test::RecordProperty("C_hat", std::to_string(C));
}

TEST(Analysis, MaskConstantsRejectBadInput) {
  auto p = fentest::random_point(4, 2, 6, 2, 1, 53);
  MaskTensor empty(p->value().dims());
  MaskTensor full = MaskTensor::full(p->value().dims());
  EXPECT_THROW(fen::estimate_mask_constants(p->value(), empty, 2, 2, 5, 1),
               std::invalid_argument);
  EXPECT_THROW(fen::estimate_mask_constants(p->value(), full, 2, 2, 0, 1),
               std::invalid_argument);

  DenseTensor rect({3, 4, 5, 2});
  EXPECT_THROW(fen::estimate_mask_constants(
                   rect, MaskTensor::full(rect.dims()), 2, 2, 5, 1),
               std::invalid_argument);
}

TEST(Analysis, RecoveryBoundExactRegimeHasZeroRhs) {
  auto truth = fentest::random_point(6, 2, 8, 3, 1, 67);
  MaskTensor full = MaskTensor::full(truth->value().dims());
  fen::Problem prob(truth->value(), full,
                    fen::SmoothingPenalty::uniform(0.0, 8),
                    fen::TimeGrid{-1.0, 1.0, 8});
  fen::FitConfig cfg;
  cfg.s = 2;
  cfg.K = 3;
  cfg.max_iter = 200;
  auto [xhat, report] = fen::fit(prob, cfg);
  ASSERT_TRUE(report.converged);

  DenseTensor zero(truth->value().dims());
  fen::BoundReport bound = fen::recovery_bound_check(
      truth->value(), xhat->value(), zero, full, {2, 2, 3}, {2, 2, 3}, 1.0,
      1.0);
  EXPECT_EQ(bound.rhs, 0.0);
  EXPECT_LE(bound.lhs, 1e-8 * fen::fnorm(truth->value()));
}

TEST(Analysis, RecoveryBoundHoldsAtTrueRanksUnderNoise) {
  fen::SimConfig cfg;
  cfg.seed = 414243;
  cfg.fit.s = cfg.s_true;
  cfg.fit.K = cfg.K_true;
  cfg.fit.max_iter = 200;
  const fen::TimeGrid grid{cfg.t_start, cfg.t_end, cfg.L};

  for (int rep = 0; rep < 3; ++rep) {
    fen::SimInstance inst = fen::generate_instance(
        cfg, 0.01, 0.1, fen::derive_seed(cfg.seed, std::uint64_t(rep)));
    fen::Problem prob(inst.noisy, inst.mask,
                      fen::SmoothingPenalty::uniform(0.0, cfg.L), grid);
    auto [xhat, fit_report] = fen::fit(prob, cfg.fit);

    auto [c, C] = fen::estimate_mask_constants(
        inst.truth->value(), inst.mask, cfg.s_true, cfg.K_true, 40,
        fen::derive_seed(cfg.seed, 1000 + std::uint64_t(rep)));
    DenseTensor noise = fen::sub(inst.noisy, inst.truth->value());
    fen::BoundReport bound = fen::recovery_bound_check(
        inst.truth->value(), xhat->value(), noise, inst.mask,
        {cfg.s_true, cfg.s_true, cfg.K_true},
        {cfg.s_true, cfg.s_true, cfg.K_true}, c, C, 40);
    EXPECT_TRUE(bound.holds) << "rep " << rep << ": lhs=" << bound.lhs
                             << " rhs=" << bound.rhs;
    EXPECT_GT(bound.rhs, 0.0);
  }
}

TEST(Analysis, RecoveryBoundRhsGrowsWhenFittedRanksShrink) {
  auto truth = fentest::random_point(6, 3, 10, 4, 2, 71);
  DenseTensor xhat = truth->value();
  DenseTensor noise(truth->value().dims());
  MaskTensor full = MaskTensor::full(truth->value().dims());

  fen::BoundReport at_truth = fen::recovery_bound_check(
      truth->value(), xhat, noise, full, {3, 3, 4}, {3, 3, 4}, 0.8, 0.9);
  fen::BoundReport reduced = fen::recovery_bound_check(
      truth->value(), xhat, noise, full, {2, 2, 3}, {3, 3, 4}, 0.8, 0.9);
  EXPECT_EQ(at_truth.rhs, 0.0);
  EXPECT_GT(reduced.rhs, 0.0);
  EXPECT_TRUE(reduced.holds);
}

TEST(Analysis, RecoveryBoundValidatesArguments) {
  auto p = fentest::random_point(4, 2, 6, 2, 1, 73);
  DenseTensor zero(p->value().dims());
  MaskTensor full = MaskTensor::full(p->value().dims());

  EXPECT_THROW(fen::recovery_bound_check(p->value(), p->value(), zero, full,
                                         {2, 2, 2}, {2, 2, 2}, 0.0, 1.0),
               std::invalid_argument);
  EXPECT_THROW(fen::recovery_bound_check(p->value(), p->value(), zero, full,
                                         {2, 2, 2}, {2, 2, 2}, 0.9, 0.5),
               std::invalid_argument);
  EXPECT_THROW(fen::recovery_bound_check(p->value(), p->value(), zero, full,
                                         {3, 2, 2}, {2, 2, 2}, 0.5, 0.9),
               std::invalid_argument);
  EXPECT_THROW(fen::recovery_bound_check(p->value(), p->value(), zero, full,
                                         {0, 2, 2}, {2, 2, 2}, 0.5, 0.9),
               std::invalid_argument);
}

fen::SimConfig small_benefit_config() {
  fen::SimConfig cfg;
  cfg.m = 6;
  cfg.L = 20;
  cfg.N = 2;
  cfg.s_true = 2;
  cfg.K_true = 3;
  cfg.sigma2 = {0.01};
  cfg.alpha = 0.1;
  cfg.replications = 3;
  cfg.seed = 8675309;
  cfg.fit.s = 2;
  cfg.fit.K = 3;
  cfg.fit.max_iter = 150;
  return cfg;
}

TEST(Analysis, SmoothingBarelyMattersWhenFullyObserved) {
  fen::SimConfig cfg = small_benefit_config();
  cfg.omega = {0.0};
  fen::SmoothingBenefitReport report = fen::smoothing_benefit_check(cfg);

  ASSERT_EQ(report.trials, 3);
  ASSERT_EQ(report.se_full_smoothed.size(), 3u);
  for (int rep = 0; rep < 3; ++rep) {
    const double plain = report.se_full_plain[size_t(rep)];
    const double smoothed = report.se_full_smoothed[size_t(rep)];
    EXPECT_LE(std::abs(smoothed - plain), 0.10 * plain)
        << "rep " << rep << ": plain=" << plain << " smoothed=" << smoothed;
  }
}

TEST(Analysis, ExtremeSmoothingDegradesTheFit) {
  fen::SimConfig mild = small_benefit_config();
  mild.omega = {0.2};
  fen::SimConfig harsh = mild;
  harsh.alpha = 1e6;

  fen::SmoothingBenefitReport a = fen::smoothing_benefit_check(mild);
  fen::SmoothingBenefitReport b = fen::smoothing_benefit_check(harsh);

  // identical instances (same seeds), so the plain fits agree and the harsh
  // penalty shows up only in the smoothed column
  for (int rep = 0; rep < 3; ++rep)
    EXPECT_DOUBLE_EQ(a.se_full_plain[size_t(rep)],
                     b.se_full_plain[size_t(rep)]);
  EXPECT_GT(mean_of(b.se_full_smoothed), mean_of(a.se_full_smoothed));
  EXPECT_GT(mean_of(b.se_full_smoothed), mean_of(b.se_full_plain));
}

TEST(Analysis, SmoothingBenefitRequiresPositiveAlpha) {
  fen::SimConfig cfg = small_benefit_config();
  cfg.alpha = 0.0;
  EXPECT_THROW(fen::smoothing_benefit_check(cfg), std::invalid_argument);
}

TEST(Analysis, MissingnessFullMaskIsFullyObserved) {
  MaskTensor full = MaskTensor::full({3, 3, 6, 2});
  fen::MissingnessReport rep = fen::missingness_uniformity(full);
  EXPECT_EQ(rep.scenario, fen::MissingnessReport::Scenario::fully_observed);
  EXPECT_EQ(rep.fiber_count, 18);
  EXPECT_EQ(rep.min_observed, 6);
  EXPECT_EQ(rep.max_observed, 6);
}

TEST(Analysis, MissingnessMostlyMissingWithCommonRatio) {
  const index_t m = 2, L = 6, N = 1;
  MaskTensor mask({m, m, L, N});
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < m; ++j) {
      mask.set_at(true, i, j, 0, 0);
      mask.set_at(true, i, j, 3, 0);
    }
  fen::MissingnessReport rep = fen::missingness_uniformity(mask);
  EXPECT_EQ(rep.scenario, fen::MissingnessReport::Scenario::mostly_missing);
  EXPECT_EQ(rep.ratio, 2);
  EXPECT_EQ(rep.min_observed, 2);
  EXPECT_EQ(rep.max_observed, 2);
}

TEST(Analysis, MissingnessMostlyObservedToleratesFullFibers) {
  const index_t m = 2, L = 6, N = 1;
  MaskTensor mask = MaskTensor::full({m, m, L, N});
  // hide two bins from every fiber except (0, 0), which stays complete
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < m; ++j) {
      if (i == 0 && j == 0) continue;
      mask.set_at(false, i, j, 1, 0);
      mask.set_at(false, i, j, 4, 0);
    }
  fen::MissingnessReport rep = fen::missingness_uniformity(mask);
  EXPECT_EQ(rep.scenario, fen::MissingnessReport::Scenario::mostly_observed);
  EXPECT_EQ(rep.ratio, 2);
  EXPECT_EQ(rep.max_observed, 6);
}

TEST(Analysis, MissingnessEmptyFiberIsNeither) {
  const index_t m = 2, L = 6, N = 1;
  MaskTensor mask = MaskTensor::full({m, m, L, N});
  for (index_t l = 0; l < L; ++l) mask.set_at(false, 1, 0, l, 0);
  fen::MissingnessReport rep = fen::missingness_uniformity(mask);
  EXPECT_EQ(rep.scenario, fen::MissingnessReport::Scenario::neither);
  EXPECT_EQ(rep.min_observed, 0);
}

TEST(Analysis, MissingnessUniformRandomMaskReportsSpread) {
  MaskTensor mask = fen::generate_mask({4, 4, 8, 2}, 0.5, 2026);
  fen::MissingnessReport rep = fen::missingness_uniformity(mask);
  EXPECT_EQ(rep.fiber_count, 32);
  EXPECT_LE(rep.min_observed, rep.max_observed);
  EXPECT_LE(rep.max_observed, 8);
  ::testing::Test::RecordProperty("scenario", fen::to_string(rep.scenario));
}

TEST(Analysis, MissingnessRejectsNon4WayMasks) {
  MaskTensor mat({4, 4});
  EXPECT_THROW(fen::missingness_uniformity(mat), std::invalid_argument);
}

}  // namespace
