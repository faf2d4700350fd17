#pragma once

// Fixed-rank symmetric Tucker manifold: points X = B x1 Phi x2 Phi x3 G with
// a shared orthonormal node factor Phi on modes 1 and 2, an orthonormal
// temporal basis G on mode 3, and mode 4 (samples) untouched. Tangent
// vectors are stored structured (core direction, one factor direction per
// symmetric mode, basis direction); retraction is the sequentially truncated
// HOSVD of the perturbed ambient tensor.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fen/tensor.hpp"

namespace fen {

class DegenerateCoreError : public std::runtime_error {
 public:
  explicit DegenerateCoreError(const std::string& msg)
      : std::runtime_error(msg) {}
};

//! Deterministic sign convention for orthonormal columns: the entry of
//! largest magnitude (earliest index on ties) is made non-negative.
inline void fix_column_signs(Eigen::MatrixXd& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    Eigen::Index arg = 0;
    double best = std::abs(m(0, j));
    for (Eigen::Index i = 1; i < m.rows(); ++i) {
      const double a = std::abs(m(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (m(arg, j) < 0.0) m.col(j) = -m.col(j);
  }
}

//! Top-k left singular vectors, sign-fixed. Deterministic for a given input.
inline Eigen::MatrixXd topk_left_singular(const Eigen::MatrixXd& m, int k) {
  if (k < 1 || k > std::min(m.rows(), m.cols()))
    throw std::invalid_argument("topk_left_singular: rank request " +
                                std::to_string(k) + " exceeds dimension of " +
                                std::to_string(m.rows()) + "x" +
                                std::to_string(m.cols()) + " matrix");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
  Eigen::MatrixXd u = svd.matrixU().leftCols(k);
  fix_column_signs(u);
  return u;
}

class TuckerPoint;
using TuckerPointPtr = std::shared_ptr<const TuckerPoint>;

//! A manifold point. Immutable after construction; the dense reconstruction
//! is evaluated eagerly and cached so concurrent readers never race.
class TuckerPoint {
 public:
  static TuckerPointPtr make(DenseTensor core, Eigen::MatrixXd node_factor,
                             Eigen::MatrixXd temporal_basis) {
    validate(core, node_factor, temporal_basis);
    auto p = std::shared_ptr<TuckerPoint>(new TuckerPoint(
        std::move(core), std::move(node_factor), std::move(temporal_basis)));
    p->value_ = p->reconstruct();
    return p;
  }

  const DenseTensor& core() const { return core_; }
  const Eigen::MatrixXd& node_factor() const { return node_factor_; }
  const Eigen::MatrixXd& temporal_basis() const { return temporal_basis_; }

  //! Cached dense reconstruction B x1 Phi x2 Phi x3 G.
  const DenseTensor& value() const { return value_; }

  index_t m() const { return node_factor_.rows(); }
  index_t s() const { return core_.dim(1); }
  index_t L() const { return temporal_basis_.rows(); }
  index_t K() const { return core_.dim(3); }
  index_t N() const { return core_.dim(4); }

 private:
  TuckerPoint(DenseTensor core, Eigen::MatrixXd node_factor,
              Eigen::MatrixXd temporal_basis)
      : core_(std::move(core)),
        node_factor_(std::move(node_factor)),
        temporal_basis_(std::move(temporal_basis)) {}

  DenseTensor reconstruct() const {
    DenseTensor x = mode_product(core_, 1, node_factor_);
    x = mode_product(x, 2, node_factor_);
    x = mode_product(x, 3, temporal_basis_);
    return x;
  }

  static void validate(const DenseTensor& core, const Eigen::MatrixXd& phi,
                       const Eigen::MatrixXd& g) {
    if (core.ndims() != 4)
      throw std::invalid_argument("TuckerPoint: core must be 4-way, got order " +
                                  std::to_string(core.ndims()));
    const index_t s = core.dim(1);
    const index_t k = core.dim(3);
    const index_t n = core.dim(4);
    if (core.dim(2) != s)
      throw std::invalid_argument(
          "TuckerPoint: core modes 1 and 2 must match, got " +
          detail::dims_to_string(core.dims()));
    if (phi.cols() != s)
      throw std::invalid_argument("TuckerPoint: node factor has " +
                                  std::to_string(phi.cols()) +
                                  " columns, core wants " + std::to_string(s));
    if (g.cols() != k)
      throw std::invalid_argument("TuckerPoint: temporal basis has " +
                                  std::to_string(g.cols()) +
                                  " columns, core wants " + std::to_string(k));
    if (s > phi.rows())
      throw std::invalid_argument("TuckerPoint: s exceeds node count");
    if (k > g.rows())
      throw std::invalid_argument("TuckerPoint: K exceeds grid length");
    if (k > s * s * n)
      throw std::invalid_argument(
          "TuckerPoint: K exceeds s*s*N, mode-3 rank unattainable");
    check_orthonormal(phi, "node factor");
    check_orthonormal(g, "temporal basis");
  }

  static void check_orthonormal(const Eigen::MatrixXd& m, const char* what) {
    const Eigen::MatrixXd gram = m.transpose() * m;
    const double dev =
        (gram - Eigen::MatrixXd::Identity(m.cols(), m.cols()))
            .cwiseAbs()
            .maxCoeff();
    if (!(dev <= 1e-10))
      throw std::invalid_argument(std::string("TuckerPoint: ") + what +
                                  " is not orthonormal (deviation " +
                                  std::to_string(dev) + ")");
  }

  DenseTensor core_;
  Eigen::MatrixXd node_factor_;
  Eigen::MatrixXd temporal_basis_;
  DenseTensor value_;
};

//! Fresh (uncached) reconstruction; value() should agree to 1e-12.
inline DenseTensor evaluate(const TuckerPoint& p) {
  DenseTensor x = mode_product(p.core(), 1, p.node_factor());
  x = mode_product(x, 2, p.node_factor());
  return mode_product(x, 3, p.temporal_basis());
}

//! Sequentially truncated HOSVD adapted to the symmetric manifold: Phi from
//! the averaged mode-1/2 unfoldings, G from the mode-3 unfolding, core by
//! orthogonal compression. Exact on tensors already of the requested ranks.
inline TuckerPointPtr shosvd(const DenseTensor& t, int s, int k) {
  if (t.ndims() != 4)
    throw std::invalid_argument("shosvd: expected a 4-way tensor, got order " +
                                std::to_string(t.ndims()));
  if (t.dim(1) != t.dim(2))
    throw std::invalid_argument("shosvd: modes 1 and 2 differ, " +
                                detail::dims_to_string(t.dims()));
  if (s < 1 || s > t.dim(1))
    throw std::invalid_argument("shosvd: rank request s=" + std::to_string(s) +
                                " exceeds node dimension " +
                                std::to_string(t.dim(1)));
  if (k < 1 || k > t.dim(3))
    throw std::invalid_argument("shosvd: rank request K=" + std::to_string(k) +
                                " exceeds grid length " +
                                std::to_string(t.dim(3)));
  const Eigen::MatrixXd m12 =
      0.5 * (matricize(t, 1) + matricize(t, 2));
  Eigen::MatrixXd phi = topk_left_singular(m12, s);
  Eigen::MatrixXd g = topk_left_singular(matricize(t, 3), k);
  DenseTensor core = mode_product(t, 1, phi.transpose());
  core = mode_product(core, 2, phi.transpose());
  core = mode_product(core, 3, g.transpose());
  return TuckerPoint::make(std::move(core), std::move(phi), std::move(g));
}

//! Structured tangent vector at `base`. The two symmetric-mode factor
//! directions are kept separate rather than summed; side conditions
//! factor_dir*' * Phi = 0 and basis_dir' * G = 0 hold by construction.
struct TangentVector {
  TuckerPointPtr base;
  DenseTensor core_dir;          // (s, s, K, N)
  Eigen::MatrixXd factor_dir1;   // m x s, mode-1 direction
  Eigen::MatrixXd factor_dir2;   // m x s, mode-2 direction
  Eigen::MatrixXd basis_dir;     // L x K
};

inline TangentVector zero_tangent(const TuckerPointPtr& p) {
  TangentVector v;
  v.base = p;
  v.core_dir = DenseTensor(p->core().dims());
  v.factor_dir1 = Eigen::MatrixXd::Zero(p->m(), p->s());
  v.factor_dir2 = Eigen::MatrixXd::Zero(p->m(), p->s());
  v.basis_dir = Eigen::MatrixXd::Zero(p->L(), p->K());
  return v;
}

namespace detail {

//! (Gram + shift)^{-1} with the conditioning policy shared by all core
//! pseudo-inverses: exact inverse when healthy, a trace-scaled spectral
//! shift past condition 1e12, a hard error when the core carries no mass.
inline Eigen::MatrixXd gram_inverse(const Eigen::MatrixXd& gram,
                                    const char* context) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
  if (es.info() != Eigen::Success)
    throw DegenerateCoreError(std::string(context) +
                              ": eigensolver failed on core Gram matrix");
  const auto& lam = es.eigenvalues();
  const double lmax = lam(lam.size() - 1);
  const double lmin = lam(0);
  if (!(lmax > 0.0) || !std::isfinite(lmax))
    throw DegenerateCoreError(std::string(context) +
                              ": core matricization is rank deficient");
  double shift = 0.0;
  if (!(lmin > 0.0) || lmax / lmin > 1e12)
    shift = 1e-12 * gram.trace() / static_cast<double>(gram.rows());
  Eigen::VectorXd inv = (lam.array() + shift).inverse().matrix();
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace detail

//! Orthogonal projection of an ambient tensor onto the tangent space at p.
//!
//! The node-factor direction is shared by modes 1 and 2, as in the tangent
//! plane of the symmetric manifold: writing U_j for the compressed unfolding
//! of A against the other two factors and B_(j) for the core unfoldings, the
//! coupled least-squares solution is
//!
//!   Phidot = P_perp (U_1 B_(1)^T + U_2 B_(2)^T)
//!                   (B_(1) B_(1)^T + B_(2) B_(2)^T)^{-1}.
//!
//! Solving per mode with separate pseudo-inverses (as one reading of the
//! projection formula suggests) lands outside the tangent plane whenever the
//! two solutions differ, and the SHOSVD retraction is then only zeroth-order
//! accurate along the result; the coupled form keeps retraction curves
//! first-order and finite-difference checks of the gradient meaningful.
//! Both factor_dir slots carry the shared direction.
inline TangentVector project_tangent(const TuckerPointPtr& p,
                                     const DenseTensor& a) {
  if (a.dims() != p->value().dims())
    throw std::invalid_argument("project_tangent: ambient dims " +
                                detail::dims_to_string(a.dims()) +
                                " do not match point dims " +
                                detail::dims_to_string(p->value().dims()));
  const Eigen::MatrixXd& phi = p->node_factor();
  const Eigen::MatrixXd& g = p->temporal_basis();
  const Eigen::MatrixXd phi_t = phi.transpose();
  const Eigen::MatrixXd g_t = g.transpose();

  TangentVector v;
  v.base = p;

  // core direction: full multilinear compression
  DenseTensor a1 = mode_product(a, 1, phi_t);
  DenseTensor a12 = mode_product(a1, 2, phi_t);
  v.core_dir = mode_product(a12, 3, g_t);

  // shared node-factor direction, coupled across modes 1 and 2
  DenseTensor a23 = mode_product(mode_product(a, 2, phi_t), 3, g_t);
  DenseTensor a13 = mode_product(a1, 3, g_t);
  const Eigen::MatrixXd u1 = matricize(a23, 1);
  const Eigen::MatrixXd u2 = matricize(a13, 2);
  const Eigen::MatrixXd b1 = matricize(p->core(), 1);
  const Eigen::MatrixXd b2 = matricize(p->core(), 2);
  const Eigen::MatrixXd gram12 =
      b1 * b1.transpose() + b2 * b2.transpose();
  Eigen::MatrixXd f = (u1 * b1.transpose() + u2 * b2.transpose()) *
                      detail::gram_inverse(gram12, "tangent projection, modes 1-2");
  f -= phi * (phi_t * f);
  v.factor_dir1 = f;
  v.factor_dir2 = std::move(f);

  // temporal basis direction
  const Eigen::MatrixXd u3 = matricize(a12, 3);
  const Eigen::MatrixXd b3 = matricize(p->core(), 3);
  Eigen::MatrixXd bd =
      u3 * b3.transpose() *
      detail::gram_inverse(b3 * b3.transpose(), "tangent projection, mode 3");
  bd -= g * (g_t * bd);
  v.basis_dir = std::move(bd);

  return v;
}

//! Embed a structured tangent vector in the ambient tensor space. The four
//! terms are mutually orthogonal thanks to the side conditions.
inline DenseTensor ambient(const TangentVector& v) {
  const TuckerPoint& p = *v.base;
  const Eigen::MatrixXd& phi = p.node_factor();
  const Eigen::MatrixXd& g = p.temporal_basis();

  DenseTensor t1 = mode_product(
      mode_product(mode_product(v.core_dir, 1, phi), 2, phi), 3, g);
  DenseTensor t2 = mode_product(
      mode_product(mode_product(p.core(), 1, v.factor_dir1), 2, phi), 3, g);
  DenseTensor t3 = mode_product(
      mode_product(mode_product(p.core(), 1, phi), 2, v.factor_dir2), 3, g);
  DenseTensor t4 = mode_product(
      mode_product(mode_product(p.core(), 1, phi), 2, phi), 3, v.basis_dir);
  axpy(t1, 1.0, t2);
  axpy(t1, 1.0, t3);
  axpy(t1, 1.0, t4);
  return t1;
}

//! R(p, gamma * v): move along the ambient embedding and re-truncate.
inline TuckerPointPtr retract(const TuckerPointPtr& p, const TangentVector& v,
                              double gamma) {
  if (v.base.get() != p.get())
    throw std::invalid_argument("retract: tangent vector has a different base");
  DenseTensor x = p->value();
  axpy(x, gamma, ambient(v));
  return shosvd(x, static_cast<int>(p->s()), static_cast<int>(p->K()));
}

//! Vector transport by re-projection of the ambient embedding.
inline TangentVector transport(const TuckerPointPtr& to,
                               const TangentVector& v) {
  return project_tangent(to, ambient(v));
}

//! a*x + b*y for tangent vectors sharing a base.
inline TangentVector tangent_combine(double a, const TangentVector& x,
                                     double b, const TangentVector& y) {
  if (x.base.get() != y.base.get())
    throw std::invalid_argument("tangent_combine: mismatched base points");
  TangentVector r;
  r.base = x.base;
  r.core_dir = add(scaled(x.core_dir, a), scaled(y.core_dir, b));
  r.factor_dir1 = a * x.factor_dir1 + b * y.factor_dir1;
  r.factor_dir2 = a * x.factor_dir2 + b * y.factor_dir2;
  r.basis_dir = a * x.basis_dir + b * y.basis_dir;
  return r;
}

inline TangentVector tangent_scale(const TangentVector& x, double a) {
  TangentVector r;
  r.base = x.base;
  r.core_dir = scaled(x.core_dir, a);
  r.factor_dir1 = a * x.factor_dir1;
  r.factor_dir2 = a * x.factor_dir2;
  r.basis_dir = a * x.basis_dir;
  return r;
}

}  // namespace fen
