#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fen/community.hpp"
#include "fen/simulation.hpp"
#include "test_util.hpp"

namespace {

using fen::DenseTensor;
using fen::TimeGrid;
using fen::TuckerPoint;
using fen::TuckerPointPtr;
using fen::index_t;

TuckerPointPtr identity_factor_point(int m, int s, int L, int K, int N,
                                     std::uint64_t seed) {
  DenseTensor core = fentest::random_tensor({s, s, K, N}, seed);
  Eigen::MatrixXd phi = Eigen::MatrixXd::Identity(m, s);
  Eigen::MatrixXd g = fentest::random_orthonormal(L, K, seed + 1);
  return TuckerPoint::make(std::move(core), std::move(phi), std::move(g));
}

TEST(Community, IdentityFactorGivesSharpAssignment) {
  auto p = identity_factor_point(5, 3, 8, 2, 1, 11);
  fen::CommunityProfile prof = fen::extract_communities(*p);

  ASSERT_EQ(prof.membership.rows(), 5);
  ASSERT_EQ(prof.membership.cols(), 3);
  ASSERT_EQ(prof.assignment.size(), 5u);
  for (int i = 0; i < 5; ++i)
    for (int a = 0; a < 3; ++a)
      EXPECT_DOUBLE_EQ(prof.membership(i, a), (i == a) ? 1.0 : 0.0);

  EXPECT_EQ(prof.assignment[0], 0);
  EXPECT_EQ(prof.assignment[1], 1);
  EXPECT_EQ(prof.assignment[2], 2);
  // nodes outside the leading block have all-zero membership; ties resolve
  // to the smallest community index
  EXPECT_EQ(prof.assignment[3], 0);
  EXPECT_EQ(prof.assignment[4], 0);

  for (int i = 0; i < 5; ++i)
    for (int a = 0; a < 3; ++a)
      EXPECT_DOUBLE_EQ(prof.signs(i, a), (i == a) ? 1.0 : 0.0);
}

TEST(Community, MembershipColumnsSumToOne) {
  auto p = fentest::random_point(8, 3, 10, 4, 2, 23);
  fen::CommunityProfile prof = fen::extract_communities(*p);

  for (int a = 0; a < 3; ++a)
    EXPECT_NEAR(prof.membership.col(a).sum(), 1.0, 1e-12);
  for (int i = 0; i < 8; ++i)
    for (int a = 0; a < 3; ++a) {
      EXPECT_GE(prof.membership(i, a), 0.0);
      EXPECT_LE(prof.membership(i, a), 1.0 + 1e-15);
    }
}

TEST(Community, AssignmentIgnoresFactorColumnSigns) {
  auto p = fentest::random_point(7, 3, 9, 3, 1, 37);
  Eigen::MatrixXd flipped = p->node_factor();
  flipped.col(1) = -flipped.col(1);
  auto q = TuckerPoint::make(p->core(), flipped, p->temporal_basis());

  fen::CommunityProfile a = fen::extract_communities(*p);
  fen::CommunityProfile b = fen::extract_communities(*q);

  EXPECT_LT((a.membership - b.membership).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_EQ(a.assignment, b.assignment);
  EXPECT_LT((a.signs.col(0) - b.signs.col(0)).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a.signs.col(1) + b.signs.col(1)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Community, StrengthReadsCoreFiberThroughBasis) {
  const int s = 2, L = 12, K = 3, N = 2;
  DenseTensor core({s, s, K, N});
  Eigen::VectorXd c(K);
  c << 0.9, -0.4, 0.2;
  for (int k = 0; k < K; ++k) core.at(0, 1, k, 1) = c(k);
  Eigen::MatrixXd phi = fentest::random_orthonormal(6, s, 41);
  Eigen::MatrixXd g = fentest::random_orthonormal(L, K, 43);
  auto p = TuckerPoint::make(core, phi, g);

  Eigen::VectorXd curve = fen::community_strength(*p, 0, 1, 1);
  ASSERT_EQ(curve.size(), L);
  EXPECT_LT((curve - g * c).cwiseAbs().maxCoeff(), 1e-14);

  // every other community pair has a zero coefficient fiber
  EXPECT_LT(fen::community_strength(*p, 1, 0, 1).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT(fen::community_strength(*p, 0, 1, 0).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Community, StrengthDoubleSumReassemblesEdgeFunctions) {
  auto p = fentest::random_point(4, 2, 6, 3, 2, 59);
  const auto& phi = p->node_factor();

  for (index_t n = 0; n < 2; ++n)
    for (index_t i = 0; i < 4; ++i)
      for (index_t j = 0; j < 4; ++j) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(6);
        for (index_t a = 0; a < 2; ++a)
          for (index_t b = 0; b < 2; ++b)
            sum += phi(i, a) * phi(j, b) * fen::community_strength(*p, a, b, n);
        for (index_t l = 0; l < 6; ++l)
          EXPECT_NEAR(sum(l), p->value().at(i, j, l, n), 1e-10);
      }
}

TEST(Community, StrengthRejectsBadIndices) {
  auto p = fentest::random_point(5, 2, 6, 2, 1, 61);
  EXPECT_THROW(fen::community_strength(*p, 2, 0, 0), std::out_of_range);
  EXPECT_THROW(fen::community_strength(*p, 0, -1, 0), std::out_of_range);
  EXPECT_THROW(fen::community_strength(*p, 0, 0, 1), std::out_of_range);
}

TEST(Community, CompleteEdgeReproducesGridValuesExactly) {
  auto p = fentest::random_point(4, 2, 7, 3, 2, 71);
  TimeGrid grid{-1.0, 1.0, 7};

  for (index_t n = 0; n < 2; ++n)
    for (index_t i = 0; i < 4; ++i)
      for (index_t l = 0; l < 7; ++l) {
        const double got = fen::complete_edge(*p, grid, i, 2, n, grid.point(l));
        EXPECT_EQ(got, p->value().at(i, 2, l, n));
      }
}

TEST(Community, CompleteEdgeInterpolatesBetweenGridPoints) {
  auto p = fentest::random_point(3, 2, 5, 2, 1, 83);
  TimeGrid grid{0.0, 1.0, 5};

  for (index_t l = 0; l + 1 < 5; ++l) {
    const double mid = 0.5 * (grid.point(l) + grid.point(l + 1));
    const double want =
        0.5 * (p->value().at(1, 2, l, 0) + p->value().at(1, 2, l + 1, 0));
    EXPECT_NEAR(fen::complete_edge(*p, grid, 1, 2, 0, mid), want, 1e-12);
  }
}

TEST(Community, CompleteEdgeExtendsFirstValueBeforeGridStart) {
  auto p = fentest::random_point(3, 2, 4, 2, 1, 89);
  TimeGrid grid{0.0, 1.0, 4};  // grid points at 0.25, 0.5, 0.75, 1.0

  const double first = p->value().at(0, 1, 0, 0);
  EXPECT_EQ(fen::complete_edge(*p, grid, 0, 1, 0, 0.0), first);
  EXPECT_EQ(fen::complete_edge(*p, grid, 0, 1, 0, 0.1), first);
  EXPECT_EQ(fen::complete_edge(*p, grid, 0, 1, 0, 0.24), first);
}

TEST(Community, CompleteEdgeValidatesArguments) {
  auto p = fentest::random_point(3, 2, 4, 2, 1, 97);
  TimeGrid grid{0.0, 1.0, 4};

  EXPECT_THROW(fen::complete_edge(*p, grid, 0, 1, 0, -0.01),
               std::out_of_range);
  EXPECT_THROW(fen::complete_edge(*p, grid, 0, 1, 0, 1.01), std::out_of_range);
  EXPECT_THROW(fen::complete_edge(*p, grid, 3, 0, 0, 0.5), std::out_of_range);
  EXPECT_THROW(fen::complete_edge(*p, grid, 0, 1, 1, 0.5), std::out_of_range);

  TimeGrid wrong{0.0, 1.0, 5};
  EXPECT_THROW(fen::complete_edge(*p, wrong, 0, 1, 0, 0.5),
               std::invalid_argument);
}

TEST(Community, CompleteEdgeAddsCenteringMeansBack) {
  auto p = fentest::random_point(3, 2, 4, 2, 1, 101);
  TimeGrid grid{0.0, 1.0, 4};
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(3, 3);
  means(0, 1) = 3.5;

  const double plain = fen::complete_edge(*p, grid, 0, 1, 0, 0.6);
  const double shifted = fen::complete_edge(*p, grid, 0, 1, 0, 0.6, &means);
  EXPECT_NEAR(shifted, plain + 3.5, 1e-12);

  const double on_grid = fen::complete_edge(*p, grid, 0, 1, 0, grid.point(2));
  const double on_grid_shifted =
      fen::complete_edge(*p, grid, 0, 1, 0, grid.point(2), &means);
  EXPECT_NEAR(on_grid_shifted, on_grid + 3.5, 1e-12);

  // other edges are untouched by this means matrix
  EXPECT_EQ(fen::complete_edge(*p, grid, 1, 0, 0, 0.6, &means),
            fen::complete_edge(*p, grid, 1, 0, 0, 0.6));
}

// With a smooth generating function the piecewise linear completion should
// track the function itself, not just the grid samples. The basis columns are
// orthonormalized sine waves; expressing them back in terms of raw sines
// gives an analytic form for each fitted edge curve.
TEST(Community, CompletedCurveTracksSmoothGeneratingFunction) {
  const int m = 2, s = 2, L = 50, K = 4, N = 1;
  const double pi = std::acos(-1.0);
  const TimeGrid grid{-1.0, 1.0, L};

  Eigen::MatrixXd g = fen::fourier_basis(L, K, -1.0, 1.0);
  Eigen::MatrixXd raw(L, K);
  for (int l = 0; l < L; ++l)
    for (int k = 0; k < K; ++k)
      raw(l, k) = std::sin((k + 1) * pi * grid.point(l));
  // columns of g live in the span of the raw waves; recover the mixing
  Eigen::MatrixXd mix = raw.colPivHouseholderQr().solve(g);
  EXPECT_LT((raw * mix - g).cwiseAbs().maxCoeff(), 1e-10);

  DenseTensor core({s, s, K, N});
  std::mt19937_64 rng(2026);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b)
      for (int k = 0; k < K; ++k)
        core.at(a, b, k, 0) = gauss(rng) / double((k + 1) * (k + 1));
  Eigen::MatrixXd phi = fentest::random_orthonormal(m, s, 113);
  auto p = TuckerPoint::make(core, phi, g);

  const index_t i = 0, j = 1;
  Eigen::VectorXd c = Eigen::VectorXd::Zero(K);
  for (int a = 0; a < s; ++a)
    for (int b = 0; b < s; ++b)
      for (int k = 0; k < K; ++k)
        c(k) += phi(i, a) * phi(j, b) * core.at(a, b, k, 0);
  const Eigen::VectorXd wave_coeff = mix * c;

  double worst = 0.0;
  for (int q = 0; q <= 200; ++q) {
    const double t =
        grid.point(0) + (1.0 - grid.point(0)) * double(q) / 200.0;
    double analytic = 0.0;
    for (int k = 0; k < K; ++k)
      analytic += wave_coeff(k) * std::sin((k + 1) * pi * t);
    const double got = fen::complete_edge(*p, grid, i, j, 0, t);
    worst = std::max(worst, std::abs(got - analytic));
  }
  EXPECT_LE(worst, 5e-3);
}

}  // namespace
