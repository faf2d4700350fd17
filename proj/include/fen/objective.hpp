#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fen/manifold.hpp"
#include "fen/tensor.hpp"

namespace fen {

//! First-difference matrix D ((L-1) x L) and the roughness kernel H = D^T D.
inline std::pair<Eigen::MatrixXd, Eigen::MatrixXd> difference_matrices(
    index_t L) {
  if (L < 2)
    throw std::invalid_argument(
        "difference_matrices: need at least two grid points, got " +
        std::to_string(L));
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(L - 1, L);
  for (index_t i = 0; i + 1 < L; ++i) {
    d(i, i) = 1.0;
    d(i, i + 1) = -1.0;
  }
  Eigen::MatrixXd h = d.transpose() * d;
  return {std::move(d), std::move(h)};
}

//! Roughness penalty (1/2) sum_k alpha_k g_k^T H g_k on the columns of the
//! temporal basis. alpha holds one weight per column; a single stored weight
//! broadcasts to any column count, so the penalty can be fixed before the
//! fitting rank is chosen.
struct SmoothingPenalty {
  Eigen::VectorXd alpha;
  Eigen::MatrixXd D;
  Eigen::MatrixXd H;

  static SmoothingPenalty uniform(double a, index_t L) {
    Eigen::VectorXd v(1);
    v(0) = a;
    return with_weights(std::move(v), L);
  }

  static SmoothingPenalty with_weights(Eigen::VectorXd a, index_t L) {
    if (a.size() == 0)
      throw std::invalid_argument("SmoothingPenalty: empty weight vector");
    for (Eigen::Index k = 0; k < a.size(); ++k)
      if (!(a(k) >= 0.0) || !std::isfinite(a(k)))
        throw std::invalid_argument(
            "SmoothingPenalty: weight " + std::to_string(k) +
            " is negative or non-finite: " + std::to_string(a(k)));
    SmoothingPenalty p;
    p.alpha = std::move(a);
    auto dh = difference_matrices(L);
    p.D = std::move(dh.first);
    p.H = std::move(dh.second);
    return p;
  }

  //! Per-column weights for a basis with K columns.
  Eigen::VectorXd weights_for(index_t K) const {
    if (alpha.size() == static_cast<Eigen::Index>(K)) return alpha;
    if (alpha.size() == 1)
      return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(K), alpha(0));
    throw std::invalid_argument(
        "SmoothingPenalty: " + std::to_string(alpha.size()) +
        " weights for a basis with " + std::to_string(K) + " columns");
  }

  //! sum_k alpha_k g_k^T H g_k (without the global 1/2).
  double roughness(const Eigen::MatrixXd& g) const {
    if (g.rows() != H.rows())
      throw std::invalid_argument(
          "SmoothingPenalty: basis has " + std::to_string(g.rows()) +
          " rows, kernel expects " + std::to_string(H.rows()));
    const Eigen::VectorXd w = weights_for(g.cols());
    double acc = 0.0;
    for (Eigen::Index k = 0; k < g.cols(); ++k)
      acc += w(k) * g.col(k).dot(H * g.col(k));
    return acc;
  }
};

//! Uniform observation grid t_l = t_start + (l/L)(t_end - t_start), l = 1..L.
//! point(l) takes the 0-based bin index, so point(length - 1) == t_end.
struct TimeGrid {
  double t_start = -1.0;
  double t_end = 1.0;
  index_t length = 0;

  double point(index_t l) const {
    if (l < 0 || l >= length)
      throw std::out_of_range("TimeGrid: bin " + std::to_string(l) +
                              " outside 0.." + std::to_string(length - 1));
    return t_start + (static_cast<double>(l + 1) /
                      static_cast<double>(length)) *
                         (t_end - t_start);
  }
};

struct ProblemOptions {
  //! Mark diagonal fibers (i == j) unobserved: networks carry no self-edges.
  bool mask_diagonal = false;
  //! Subtract each edge's mean over its observed entries, remembering the
  //! means for add-back at completion time.
  bool center = false;
};

//! A masked completion instance: data, observation mask, roughness penalty,
//! and the time grid the third mode lives on.
class Problem {
 public:
  Problem(DenseTensor y, MaskTensor mask, SmoothingPenalty penalty,
          TimeGrid grid, ProblemOptions options = {})
      : data_(std::move(y)),
        mask_(std::move(mask)),
        penalty_(std::move(penalty)),
        grid_(grid) {
    if (data_.ndims() != 4)
      throw std::invalid_argument("Problem: data must be 4-way, got order " +
                                  std::to_string(data_.ndims()));
    if (data_.dim(1) != data_.dim(2))
      throw std::invalid_argument(
          "Problem: modes 1 and 2 must match (" + std::to_string(data_.dim(1)) +
          " vs " + std::to_string(data_.dim(2)) + ")");
    check_mask_dims(data_, mask_, "Problem");
    if (grid_.length != data_.dim(3))
      throw std::invalid_argument(
          "Problem: grid has " + std::to_string(grid_.length) +
          " bins, data has " + std::to_string(data_.dim(3)));
    if (!(grid_.t_end > grid_.t_start))
      throw std::invalid_argument("Problem: grid end must exceed start");
    if (penalty_.H.rows() != data_.dim(3))
      throw std::invalid_argument(
          "Problem: roughness kernel is " + std::to_string(penalty_.H.rows()) +
          "x" + std::to_string(penalty_.H.cols()) + ", data has " +
          std::to_string(data_.dim(3)) + " bins");

    const index_t m = data_.dim(1);
    const index_t L = data_.dim(3);
    const index_t N = data_.dim(4);
    if (options.mask_diagonal)
      for (index_t i = 0; i < m; ++i)
        for (index_t l = 0; l < L; ++l)
          for (index_t n = 0; n < N; ++n) mask_.set_at(false, i, i, l, n);

    edge_means_ = Eigen::MatrixXd::Zero(m, m);
    if (options.center) {
      centered_ = true;
      for (index_t i = 0; i < m; ++i)
        for (index_t j = 0; j < m; ++j) {
          detail::CompensatedSum sum;
          index_t seen = 0;
          for (index_t n = 0; n < N; ++n)
            for (index_t l = 0; l < L; ++l)
              if (mask_.at(i, j, l, n)) {
                sum.add(data_.at(i, j, l, n));
                ++seen;
              }
          if (seen == 0) continue;
          const double mean = sum.value() / static_cast<double>(seen);
          edge_means_(i, j) = mean;
          for (index_t n = 0; n < N; ++n)
            for (index_t l = 0; l < L; ++l)
              data_.at(i, j, l, n) -= mean;
        }
    }
  }

  index_t m() const { return data_.dim(1); }
  index_t L() const { return data_.dim(3); }
  index_t N() const { return data_.dim(4); }

  const DenseTensor& data() const { return data_; }
  const MaskTensor& mask() const { return mask_; }
  const SmoothingPenalty& penalty() const { return penalty_; }
  const TimeGrid& grid() const { return grid_; }
  bool centered() const { return centered_; }
  //! Per-edge observed means, zero where centering was off or nothing seen.
  const Eigen::MatrixXd& edge_means() const { return edge_means_; }

 private:
  DenseTensor data_;
  MaskTensor mask_;
  SmoothingPenalty penalty_;
  TimeGrid grid_;
  bool centered_ = false;
  Eigen::MatrixXd edge_means_;
};

namespace detail {

inline void check_point_problem(const TuckerPointPtr& p, const Problem& prob,
                                const char* op) {
  if (!p) throw std::invalid_argument(std::string(op) + ": null point");
  if (p->value().dims() != prob.data().dims())
    throw std::invalid_argument(
        std::string(op) + ": point dims " + dims_to_string(p->value().dims()) +
        " do not match data dims " + dims_to_string(prob.data().dims()));
}

}  // namespace detail

//! (1/2)||P_Omega(Y - X)||_F^2 + (1/2) sum_k alpha_k g_k^T H g_k.
inline double loss(const TuckerPointPtr& p, const Problem& prob) {
  detail::check_point_problem(p, prob, "loss");
  const double data_term = masked_sq_error(prob.data(), p->value(), prob.mask());
  return 0.5 * data_term + 0.5 * prob.penalty().roughness(p->temporal_basis());
}

//! Gradient of the loss in the ambient tensor space.
//!
//! The data term contributes P_Omega(X - Y). Writing the reconstruction as
//! X = (B x1 Phi x2 Phi) x3 G with Q the mode-3 unfolding of the inner part,
//! the penalty term contributes fold_3(P_Gperp H G diag(alpha) S^T) with
//! S = Q^T (QQ^T)^{-1}, which collapses to
//!
//!   (B x1 Phi x2 Phi) x3 [P_Gperp H G diag(alpha) (B_(3) B_(3)^T)^{-1}]
//!
//! because QQ^T = B_(3) B_(3)^T when Phi has orthonormal columns. The
//! projector P_Gperp = I - GG^T removes the component of the chain-rule
//! sensitivity that G cannot move along (G is constrained orthonormal);
//! without it, directional derivatives along retraction curves disagree with
//! the gradient whenever alpha > 0.
inline DenseTensor euclidean_gradient(const TuckerPointPtr& p,
                                      const Problem& prob) {
  detail::check_point_problem(p, prob, "euclidean_gradient");
  DenseTensor grad = masked_diff(p->value(), prob.data(), prob.mask());

  const Eigen::VectorXd w = prob.penalty().weights_for(p->K());
  if (w.maxCoeff() > 0.0) {
    const Eigen::MatrixXd b3 = matricize(p->core(), 3);
    const Eigen::MatrixXd gram_inv =
        detail::gram_inverse(b3 * b3.transpose(), "smoothing gradient");
    const Eigen::MatrixXd& g = p->temporal_basis();
    Eigen::MatrixXd sens = prob.penalty().H * g * w.asDiagonal();
    sens -= g * (g.transpose() * sens);
    const Eigen::MatrixXd coeff = sens * gram_inv;
    DenseTensor inner_part =
        mode_product(mode_product(p->core(), 1, p->node_factor()), 2,
                     p->node_factor());
    axpy(grad, 1.0, mode_product(inner_part, 3, coeff));
  }
  return grad;
}

//! Euclidean gradient projected onto the tangent space at p.
inline TangentVector riemann_gradient(const TuckerPointPtr& p,
                                      const Problem& prob) {
  return project_tangent(p, euclidean_gradient(p, prob));
}

}  // namespace fen
