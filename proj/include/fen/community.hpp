#pragma once

// Interpretation layer over a fitted model: community memberships read off
// the node factor, community-strength curves read off the core and temporal
// basis, and continuous evaluation of fitted edge functions between grid
// points.

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fen/manifold.hpp"
#include "fen/objective.hpp"
#include "fen/tensor.hpp"

namespace fen {

//! Squared node-factor loadings read as community memberships. Each column
//! of `membership` sums to 1 (the factor columns are unit vectors), so entry
//! (i, a) is the weight of node i in community a. `assignment` takes the
//! argmax per node (smallest index on ties); `signs` keeps the loading signs
//! separately, since squaring erases them and the factor's column signs are
//! a gauge choice.
struct CommunityProfile {
  Eigen::MatrixXd membership;
  std::vector<index_t> assignment;
  Eigen::MatrixXd signs;
};

inline CommunityProfile extract_communities(const TuckerPoint& p) {
  const Eigen::MatrixXd& phi = p.node_factor();
  CommunityProfile profile;
  profile.membership = phi.cwiseProduct(phi);
  profile.signs = phi.unaryExpr([](double v) {
    if (v > 0.0) return 1.0;
    if (v < 0.0) return -1.0;
    return 0.0;
  });
  profile.assignment.resize(static_cast<std::size_t>(phi.rows()));
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index a = 1; a < phi.cols(); ++a)
      if (profile.membership(i, a) > profile.membership(i, best)) best = a;
    profile.assignment[static_cast<std::size_t>(i)] =
        static_cast<index_t>(best);
  }
  return profile;
}

//! Strength curve of the community pair (a, b) for sample n, sampled on the
//! temporal grid: C_ab(t_l) = sum_k B[a,b,k,n] G[l,k].
inline Eigen::VectorXd community_strength(const TuckerPoint& p, index_t a,
                                          index_t b, index_t n) {
  if (a < 0 || a >= p.s() || b < 0 || b >= p.s())
    throw std::out_of_range("community_strength: community index out of "
                            "range 0.." + std::to_string(p.s() - 1));
  if (n < 0 || n >= p.N())
    throw std::out_of_range("community_strength: sample index out of range "
                            "0.." + std::to_string(p.N() - 1));
  Eigen::VectorXd coeff(p.K());
  for (index_t k = 0; k < p.K(); ++k) coeff(k) = p.core().at(a, b, k, n);
  return p.temporal_basis() * coeff;
}

//! Fitted edge function evaluated at an arbitrary time. Grid hits return
//! the stored value exactly; interior times interpolate linearly between the
//! bracketing grid points; times before the first grid point (the grid
//! starts one spacing after t_start) extend the first value as a constant.
//! Centering means, when provided, are added back.
inline double complete_edge(const TuckerPoint& p, const TimeGrid& grid,
                            index_t i, index_t j, index_t n, double t,
                            const Eigen::MatrixXd* edge_means = nullptr) {
  if (i < 0 || i >= p.m() || j < 0 || j >= p.m())
    throw std::out_of_range("complete_edge: node index out of range 0.." +
                            std::to_string(p.m() - 1));
  if (n < 0 || n >= p.N())
    throw std::out_of_range("complete_edge: sample index out of range 0.." +
                            std::to_string(p.N() - 1));
  if (grid.length != p.L())
    throw std::invalid_argument("complete_edge: grid length " +
                                std::to_string(grid.length) +
                                " does not match temporal basis rows " +
                                std::to_string(p.L()));
  if (!(t >= grid.t_start) || !(t <= grid.t_end))
    throw std::out_of_range("complete_edge: t = " + std::to_string(t) +
                            " outside [" + std::to_string(grid.t_start) +
                            ", " + std::to_string(grid.t_end) + "]");

  const double mean =
      edge_means ? (*edge_means)(static_cast<Eigen::Index>(i),
                                 static_cast<Eigen::Index>(j))
                 : 0.0;
  const double span = grid.t_end - grid.t_start;
  const double u =
      (t - grid.t_start) / span * static_cast<double>(grid.length) - 1.0;

  const auto value_at = [&](index_t l) { return p.value().at(i, j, l, n); };

  // exact grid hits must reproduce stored values bit-for-bit, so test the
  // nearest grid point before interpolating through rounded arithmetic
  const index_t near = static_cast<index_t>(std::llround(std::max(u, 0.0)));
  if (near < grid.length && grid.point(near) == t) return value_at(near) + mean;

  if (u <= 0.0) return value_at(0) + mean;
  const index_t lo = std::min(static_cast<index_t>(u), grid.length - 2);
  const double w = u - static_cast<double>(lo);
  return value_at(lo) + w * (value_at(lo + 1) - value_at(lo)) + mean;
}

}  // namespace fen
