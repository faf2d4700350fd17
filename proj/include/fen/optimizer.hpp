#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fen/manifold.hpp"
#include "fen/objective.hpp"
#include "fen/tensor.hpp"

namespace fen {

struct LineSearchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class InitScheme { interp_shosvd, zero_fill_shosvd, provided };

inline const char* to_string(InitScheme s) {
  switch (s) {
    case InitScheme::interp_shosvd: return "interp_shosvd";
    case InitScheme::zero_fill_shosvd: return "zero_fill_shosvd";
    case InitScheme::provided: return "provided";
  }
  return "unknown";
}

inline InitScheme init_scheme_from_string(const std::string& s) {
  if (s == "interp_shosvd") return InitScheme::interp_shosvd;
  if (s == "zero_fill_shosvd") return InitScheme::zero_fill_shosvd;
  if (s == "provided") return InitScheme::provided;
  throw std::invalid_argument("unknown init scheme: " + s);
}

enum class StopReason { grad_tol, obj_tol, max_iter, line_search_failure };

inline const char* to_string(StopReason r) {
  switch (r) {
    case StopReason::grad_tol: return "grad_tol";
    case StopReason::obj_tol: return "obj_tol";
    case StopReason::max_iter: return "max_iter";
    case StopReason::line_search_failure: return "line_search_failure";
  }
  return "unknown";
}

struct FitConfig {
  index_t s = 1;
  index_t K = 1;
  //! Optional override of the problem's smoothing weights; one entry per
  //! basis column, or a single entry that broadcasts.
  std::optional<Eigen::VectorXd> alpha;
  index_t max_iter = 500;
  //! Gradient stop: fnorm(ambient(grad)) <= grad_tol * max(1, fnorm(Y)).
  double grad_tol = 1e-8;
  //! Stall stop: objective decrease <= obj_tol * max(1, |objective|).
  double obj_tol = 1e-12;
  std::uint64_t seed = 0;
  InitScheme init = InitScheme::interp_shosvd;
  //! Starting point for init = provided; ranks must match s and K.
  TuckerPointPtr init_point;
};

struct FitReport {
  index_t iterations = 0;
  //! Objective value before any step and after each accepted step.
  std::vector<double> objective_trace;
  //! Riemannian gradient norm after each accepted step.
  std::vector<double> grad_norm_trace;
  std::vector<double> step_trace;
  std::vector<double> beta_trace;
  bool converged = false;
  StopReason termination_reason = StopReason::max_iter;
};

namespace detail {

inline void check_fit_config(const Problem& prob, const FitConfig& cfg) {
  if (cfg.s < 1 || cfg.K < 1)
    throw std::invalid_argument("fit: ranks must be at least 1, got s=" +
                                std::to_string(cfg.s) +
                                " K=" + std::to_string(cfg.K));
  if (cfg.max_iter < 0)
    throw std::invalid_argument("fit: max_iter must be non-negative");
  if (!(cfg.grad_tol > 0.0) || !(cfg.obj_tol > 0.0))
    throw std::invalid_argument("fit: tolerances must be positive");
  if (cfg.init == InitScheme::provided) {
    if (!cfg.init_point)
      throw std::invalid_argument("fit: init=provided needs an init_point");
    const TuckerPoint& p = *cfg.init_point;
    if (p.value().dims() != prob.data().dims())
      throw std::invalid_argument(
          "fit: init_point dims " + dims_to_string(p.value().dims()) +
          " do not match data dims " + dims_to_string(prob.data().dims()));
    if (p.s() != cfg.s || p.K() != cfg.K)
      throw std::invalid_argument(
          "fit: init_point ranks (s=" + std::to_string(p.s()) +
          ", K=" + std::to_string(p.K()) + ") do not match config (s=" +
          std::to_string(cfg.s) + ", K=" + std::to_string(cfg.K) + ")");
  }
}

}  // namespace detail

//! Fill unobserved entries by linear interpolation along the time mode,
//! fiber by fiber, extending the nearest observed value past the ends.
//! Fibers with no observations fill with zero.
inline DenseTensor interpolation_fill(const DenseTensor& y,
                                      const MaskTensor& mask) {
  if (y.ndims() != 4)
    throw std::invalid_argument(
        "interpolation_fill: data must be 4-way, got order " +
        std::to_string(y.ndims()));
  check_mask_dims(y, mask, "interpolation_fill");
  DenseTensor out = y;
  const index_t m1 = y.dim(1), m2 = y.dim(2), L = y.dim(3), N = y.dim(4);
  std::vector<index_t> obs;
  obs.reserve(static_cast<std::size_t>(L));
  for (index_t i = 0; i < m1; ++i)
    for (index_t j = 0; j < m2; ++j)
      for (index_t n = 0; n < N; ++n) {
        obs.clear();
        for (index_t l = 0; l < L; ++l)
          if (mask.at(i, j, l, n)) obs.push_back(l);
        if (obs.empty()) {
          for (index_t l = 0; l < L; ++l) out.at(i, j, l, n) = 0.0;
          continue;
        }
        for (index_t l = 0; l < L; ++l) {
          if (mask.at(i, j, l, n)) continue;
          const auto nxt = std::lower_bound(obs.begin(), obs.end(), l);
          if (nxt == obs.begin()) {
            out.at(i, j, l, n) = y.at(i, j, obs.front(), n);
          } else if (nxt == obs.end()) {
            out.at(i, j, l, n) = y.at(i, j, obs.back(), n);
          } else {
            const index_t l1 = *nxt;
            const index_t l0 = *(nxt - 1);
            const double w = static_cast<double>(l - l0) /
                             static_cast<double>(l1 - l0);
            out.at(i, j, l, n) = (1.0 - w) * y.at(i, j, l0, n) +
                                 w * y.at(i, j, l1, n);
          }
        }
      }
  return out;
}

//! Starting point for a fit: fill-then-compress, or the caller's point.
inline TuckerPointPtr initialize(const Problem& prob, const FitConfig& cfg) {
  detail::check_fit_config(prob, cfg);
  switch (cfg.init) {
    case InitScheme::provided:
      return cfg.init_point;
    case InitScheme::zero_fill_shosvd:
      return shosvd(mask_apply(prob.data(), prob.mask()), cfg.s, cfg.K);
    case InitScheme::interp_shosvd:
      break;
  }
  return shosvd(interpolation_fill(prob.data(), prob.mask()), cfg.s, cfg.K);
}

//! Exact minimizer of the data term along the ambient ray through eta,
//! then halved (at most 30 times) until the full objective strictly
//! decreases along the retraction curve.
inline double step_size(const TuckerPointPtr& p, const TangentVector& eta,
                        const Problem& prob) {
  detail::check_point_problem(p, prob, "step_size");
  if (eta.base.get() != p.get())
    throw std::invalid_argument("step_size: direction is anchored elsewhere");
  const DenseTensor amb = ambient(eta);
  const double denom = masked_inner(amb, amb, prob.mask());
  if (!(denom > 0.0))
    throw LineSearchError("step_size: direction vanishes on the observed set");
  const DenseTensor resid = masked_diff(prob.data(), p->value(), prob.mask());
  double gamma = masked_inner(amb, resid, prob.mask()) / denom;
  if (!std::isfinite(gamma) || !(gamma > 0.0))
    throw LineSearchError(
        "step_size: closed-form step is not positive along this direction");
  const double f0 = loss(p, prob);
  for (int halvings = 0; halvings <= 30; ++halvings) {
    if (loss(retract(p, eta, gamma), prob) < f0) return gamma;
    gamma *= 0.5;
  }
  throw LineSearchError(
      "step_size: no objective decrease after 30 halvings");
}

//! Polak-Ribiere+ coefficient on ambient inner products.
inline double beta_pr_plus(const TangentVector& grad_curr,
                           const TangentVector& grad_prev_transported,
                           double grad_prev_norm) {
  if (!(grad_prev_norm > 0.0)) return 0.0;
  const DenseTensor g = ambient(grad_curr);
  const DenseTensor z = ambient(grad_prev_transported);
  const double num = inner(g, g) - inner(g, z);
  return std::max(0.0, num / (grad_prev_norm * grad_prev_norm));
}

//! Riemannian conjugate gradient on the decomposition manifold:
//! PR+ directions with transported memory, closed-form safeguarded steps,
//! restart to steepest descent whenever the combined direction fails to
//! point downhill.
inline std::pair<TuckerPointPtr, FitReport> fit(const Problem& prob,
                                                const FitConfig& cfg) {
  detail::check_fit_config(prob, cfg);
  const Problem local =
      cfg.alpha ? Problem(prob.data(), prob.mask(),
                          SmoothingPenalty::with_weights(*cfg.alpha, prob.L()),
                          prob.grid())
                : prob;

  TuckerPointPtr x = initialize(local, cfg);
  FitReport report;
  report.objective_trace.push_back(loss(x, local));
  if (cfg.max_iter == 0) return {x, report};

  const double grad_scale = std::max(1.0, fnorm(local.data()));

  TangentVector grad = riemann_gradient(x, local);
  double grad_norm = fnorm(ambient(grad));
  if (grad_norm <= cfg.grad_tol * grad_scale) {
    report.converged = true;
    report.termination_reason = StopReason::grad_tol;
    return {x, report};
  }

  TangentVector dir = tangent_scale(grad, -1.0);
  double beta_used = 0.0;

  while (report.iterations < cfg.max_iter) {
    double gamma;
    try {
      gamma = step_size(x, dir, local);
    } catch (const LineSearchError&) {
      report.termination_reason = StopReason::line_search_failure;
      return {x, report};
    }

    TuckerPointPtr x_next = retract(x, dir, gamma);
    const double f_prev = report.objective_trace.back();
    const double f_next = loss(x_next, local);
    report.objective_trace.push_back(f_next);
    report.step_trace.push_back(gamma);
    report.beta_trace.push_back(beta_used);
    ++report.iterations;

    TangentVector grad_next = riemann_gradient(x_next, local);
    const double grad_next_norm = fnorm(ambient(grad_next));
    report.grad_norm_trace.push_back(grad_next_norm);

    if (grad_next_norm <= cfg.grad_tol * grad_scale) {
      report.converged = true;
      report.termination_reason = StopReason::grad_tol;
      return {x_next, report};
    }
    if (f_prev - f_next <= cfg.obj_tol * std::max(1.0, std::abs(f_prev))) {
      report.converged = true;
      report.termination_reason = StopReason::obj_tol;
      return {x_next, report};
    }

    TangentVector prev_grad_moved = transport(x_next, grad);
    TangentVector dir_moved = transport(x_next, dir);
    double beta = beta_pr_plus(grad_next, prev_grad_moved, grad_norm);
    TangentVector dir_next =
        tangent_combine(-1.0, grad_next, beta, dir_moved);
    if (inner(ambient(dir_next), ambient(grad_next)) >= 0.0) {
      dir_next = tangent_scale(grad_next, -1.0);
      beta = 0.0;
    }

    x = std::move(x_next);
    grad = std::move(grad_next);
    grad_norm = grad_next_norm;
    dir = std::move(dir_next);
    beta_used = beta;
  }

  report.termination_reason = StopReason::max_iter;
  return {x, report};
}

}  // namespace fen
