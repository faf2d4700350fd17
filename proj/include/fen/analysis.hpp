#pragma once

// Empirical checks of the model's operating assumptions at desk scale: the
// mask-sensitivity constants, the recovery-error bound they imply, the
// benefit of smoothing for the unobserved region, and uniformity of
// missingness across edge fibers.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fen/manifold.hpp"
#include "fen/optimizer.hpp"
#include "fen/rng.hpp"
#include "fen/simulation.hpp"
#include "fen/tensor.hpp"

namespace fen {

//! One checked inequality: empirical mask-sensitivity constants, the two
//! sides, and the verdict. Constants estimated by sampling under-cover the
//! true extremes, so every report from this module is "empirical" by nature.
struct BoundReport {
  double c_hat = 0.0;
  double C_hat = 0.0;
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
  index_t trial_count = 0;
};

namespace detail {

//! Random point of the rank-(s, s, K, N) symmetric manifold: orthonormal
//! factors from QR of Gaussian draws, Gaussian core.
inline TuckerPointPtr random_manifold_point(index_t m, index_t s, index_t L,
                                            index_t K, index_t N,
                                            std::uint64_t seed) {
  Eigen::MatrixXd phi = random_orthonormal_factor(m, s, derive_seed(seed, 1));
  Eigen::MatrixXd g = random_orthonormal_factor(L, K, derive_seed(seed, 2));
  std::mt19937_64 rng(derive_seed(seed, 3));
  std::normal_distribution<double> gauss(0.0, 1.0);
  DenseTensor core({s, s, K, N});
  for (index_t i = 0; i < core.size(); ++i) core[i] = gauss(rng);
  return TuckerPoint::make(std::move(core), std::move(phi), std::move(g));
}

}  // namespace detail

//! Empirical bounds on how much of a perturbation the mask can see: the min
//! and max of ||P_Omega(X - Xtilde)||_F / ||X - Xtilde||_F over random
//! manifold points Xtilde. Both lie in [0, 1]; a full mask gives exactly 1.
inline std::pair<double, double> estimate_mask_constants(
    const DenseTensor& x, const MaskTensor& mask, index_t s, index_t K,
    index_t trials, std::uint64_t seed) {
  check_mask_dims(x, mask, "estimate_mask_constants");
  if (x.ndims() != 4 || x.dim(1) != x.dim(2))
    throw std::invalid_argument(
        "estimate_mask_constants: expected a square 4-way tensor");
  if (trials < 1)
    throw std::invalid_argument("estimate_mask_constants: trials must be >= 1");
  if (mask.observed_count() == 0)
    throw std::invalid_argument(
        "estimate_mask_constants: empty mask makes the lower constant 0");

  const index_t m = x.dim(1), L = x.dim(3), N = x.dim(4);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (index_t trial = 0; trial < trials; ++trial) {
    TuckerPointPtr xt = detail::random_manifold_point(
        m, s, L, K, N, derive_seed(seed, static_cast<std::uint64_t>(trial)));
    DenseTensor diff = x;
    axpy(diff, -1.0, xt->value());
    const double denom = fnorm(diff);
    if (denom == 0.0) continue;
    const double ratio = std::sqrt(masked_inner(diff, diff, mask)) / denom;
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  if (!(lo <= hi))
    throw std::invalid_argument(
        "estimate_mask_constants: every trial degenerated");
  return {lo, hi};
}

//! Checks the recovery-error bound for an unsmoothed fit at ranks r against
//! true ranks r0 (both over the three decomposed modes):
//!   ||Xhat - X||_F <= (2/c) ||P_Omega(E)||_F
//!                     + (C/c) sqrt(sum_i delta_i (1 - r_i/r0_i)) ||X||_F
//! with delta = (4, 4, 1). Requires r_i <= r0_i, the regime the bound
//! addresses.
inline BoundReport recovery_bound_check(const DenseTensor& x,
                                        const DenseTensor& xhat,
                                        const DenseTensor& noise,
                                        const MaskTensor& mask,
                                        std::array<index_t, 3> ranks,
                                        std::array<index_t, 3> true_ranks,
                                        double c_hat, double C_hat,
                                        index_t trial_count = 0) {
  check_same_dims(x, xhat, "recovery_bound_check");
  check_same_dims(x, noise, "recovery_bound_check");
  check_mask_dims(x, mask, "recovery_bound_check");
  if (!(c_hat > 0.0) || !(C_hat >= c_hat))
    throw std::invalid_argument(
        "recovery_bound_check: need 0 < c_hat <= C_hat");
  const double delta[3] = {4.0, 4.0, 1.0};
  double rank_gap = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (ranks[i] < 1 || true_ranks[i] < 1 || ranks[i] > true_ranks[i])
      throw std::invalid_argument(
          "recovery_bound_check: need 1 <= r_i <= r0_i per mode");
    rank_gap += delta[i] * (1.0 - static_cast<double>(ranks[i]) /
                                      static_cast<double>(true_ranks[i]));
  }

  DenseTensor diff = xhat;
  axpy(diff, -1.0, x);

  BoundReport report;
  report.c_hat = c_hat;
  report.C_hat = C_hat;
  report.trial_count = trial_count;
  report.lhs = fnorm(diff);
  report.rhs = (2.0 / c_hat) * std::sqrt(masked_inner(noise, noise, mask)) +
               (C_hat / c_hat) * std::sqrt(rank_gap) * fnorm(x);
  report.holds = report.lhs <= report.rhs;
  return report;
}

//! Paired comparison of smoothed vs unsmoothed fits on identical data:
//! each replication generates one (Y, Omega) and fits twice, once with the
//! configured smoothing weight and once with alpha = 0. The headline number
//! is how often smoothing lowers the squared error on the hidden entries.
struct SmoothingBenefitReport {
  std::vector<double> se_miss_smoothed;
  std::vector<double> se_miss_plain;
  std::vector<double> se_full_smoothed;
  std::vector<double> se_full_plain;
  index_t wins = 0;
  index_t trials = 0;
  double win_fraction = 0.0;
  bool holds = false;
};

inline SmoothingBenefitReport smoothing_benefit_check(const SimConfig& cfg) {
  validate(cfg);
  if (!(cfg.alpha > 0.0))
    throw std::invalid_argument(
        "smoothing_benefit_check: cfg.alpha must be positive to compare "
        "against the unsmoothed fit");
  const double sigma2 = cfg.sigma2.front();
  const double omega = cfg.omega.front();

  SmoothingBenefitReport report;
  const std::uint64_t cell_seed = derive_seed(cfg.seed, 0);
  for (index_t rep = 0; rep < cfg.replications; ++rep) {
    const std::uint64_t rep_seed =
        derive_seed(cell_seed, static_cast<std::uint64_t>(rep));
    SimInstance inst = generate_instance(cfg, sigma2, omega, rep_seed);
    const TimeGrid grid{cfg.t_start, cfg.t_end, cfg.L};

    double se_miss[2], se_full[2];
    const double alphas[2] = {cfg.alpha, 0.0};
    for (int v = 0; v < 2; ++v) {
      Problem prob(inst.noisy, inst.mask,
                   SmoothingPenalty::uniform(alphas[v], cfg.L), grid);
      FitConfig fit_cfg = cfg.fit;
      fit_cfg.alpha.reset();
      fit_cfg.seed = rep_seed;
      auto [point, fit_report] = fit(prob, fit_cfg);
      auto [full, miss] =
          se_metrics(point->value(), inst.truth->value(), inst.mask);
      se_full[v] = full;
      se_miss[v] = miss;
    }
    report.se_miss_smoothed.push_back(se_miss[0]);
    report.se_miss_plain.push_back(se_miss[1]);
    report.se_full_smoothed.push_back(se_full[0]);
    report.se_full_plain.push_back(se_full[1]);
    if (se_miss[0] < se_miss[1]) ++report.wins;
  }
  report.trials = cfg.replications;
  report.win_fraction =
      static_cast<double>(report.wins) / static_cast<double>(report.trials);
  report.holds = report.win_fraction >= 0.6;
  return report;
}

//! Uniformity of missingness across the per-edge temporal fibers: either
//! every fiber is mostly missing with a common rounded-up missing/observed
//! ratio, or every fiber is mostly observed with a common rounded-down
//! observed/missing ratio (fully observed fibers are compatible with any
//! ratio), or neither.
struct MissingnessReport {
  enum class Scenario { fully_observed, mostly_missing, mostly_observed,
                        neither };
  Scenario scenario = Scenario::neither;
  index_t ratio = 0;
  index_t fiber_count = 0;
  index_t min_observed = 0;
  index_t max_observed = 0;
};

inline const char* to_string(MissingnessReport::Scenario s) {
  switch (s) {
    case MissingnessReport::Scenario::fully_observed: return "fully_observed";
    case MissingnessReport::Scenario::mostly_missing: return "mostly_missing";
    case MissingnessReport::Scenario::mostly_observed:
      return "mostly_observed";
    case MissingnessReport::Scenario::neither: return "neither";
  }
  return "neither";
}

inline MissingnessReport missingness_uniformity(const MaskTensor& mask) {
  if (mask.ndims() != 4)
    throw std::invalid_argument("missingness_uniformity: expected a 4-way "
                                "mask");
  const index_t m1 = mask.dims()[0], m2 = mask.dims()[1];
  const index_t L = mask.dims()[2], N = mask.dims()[3];

  MissingnessReport report;
  report.fiber_count = m1 * m2 * N;
  report.min_observed = L;
  report.max_observed = 0;

  std::vector<index_t> observed;
  observed.reserve(static_cast<std::size_t>(report.fiber_count));
  for (index_t i = 0; i < m1; ++i)
    for (index_t j = 0; j < m2; ++j)
      for (index_t n = 0; n < N; ++n) {
        index_t count = 0;
        for (index_t l = 0; l < L; ++l)
          if (mask.at(i, j, l, n)) ++count;
        observed.push_back(count);
        report.min_observed = std::min(report.min_observed, count);
        report.max_observed = std::max(report.max_observed, count);
      }

  if (report.min_observed == L) {
    report.scenario = MissingnessReport::Scenario::fully_observed;
    return report;
  }

  bool mostly_missing = true;
  index_t ratio_up = 0;
  for (index_t obs : observed) {
    const index_t miss = L - obs;
    if (obs == 0 || obs > miss) {
      mostly_missing = false;
      break;
    }
    const index_t r = (miss + obs - 1) / obs;
    if (ratio_up == 0)
      ratio_up = r;
    else if (r != ratio_up) {
      mostly_missing = false;
      break;
    }
  }
  if (mostly_missing) {
    report.scenario = MissingnessReport::Scenario::mostly_missing;
    report.ratio = ratio_up;
    return report;
  }

  bool mostly_observed = true;
  index_t ratio_down = 0;
  for (index_t obs : observed) {
    const index_t miss = L - obs;
    if (obs < miss) {
      mostly_observed = false;
      break;
    }
    if (miss == 0) continue;
    const index_t r = obs / miss;
    if (ratio_down == 0)
      ratio_down = r;
    else if (r != ratio_down) {
      mostly_observed = false;
      break;
    }
  }
  if (mostly_observed && ratio_down > 0) {
    report.scenario = MissingnessReport::Scenario::mostly_observed;
    report.ratio = ratio_down;
    return report;
  }

  report.scenario = MissingnessReport::Scenario::neither;
  return report;
}

}  // namespace fen
