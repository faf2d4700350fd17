#pragma once

#include <random>

#include <Eigen/Dense>

#include "fen/manifold.hpp"
#include "fen/tensor.hpp"

namespace fentest {

inline fen::DenseTensor random_tensor(std::vector<fen::index_t> dims,
                                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  fen::DenseTensor t(std::move(dims));
  for (fen::index_t i = 0; i < t.size(); ++i) t[i] = gauss(rng);
  return t;
}

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = gauss(rng);
  return m;
}

//! Haar-ish orthonormal columns via QR of a Gaussian matrix.
inline Eigen::MatrixXd random_orthonormal(int rows, int cols,
                                          std::uint64_t seed) {
  Eigen::MatrixXd g = random_matrix(rows, cols, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  return q;
}

inline fen::TuckerPointPtr random_point(int m, int s, int L, int K, int N,
                                        std::uint64_t seed) {
  fen::DenseTensor core = random_tensor({s, s, K, N}, seed);
  Eigen::MatrixXd phi = random_orthonormal(m, s, seed + 1);
  Eigen::MatrixXd g = random_orthonormal(L, K, seed + 2);
  return fen::TuckerPoint::make(std::move(core), std::move(phi), std::move(g));
}

//! A random structured tangent vector at p with unit-scale components.
//! The node-factor direction is shared by modes 1 and 2, matching the
//! tangent plane of the symmetric decomposition.
inline fen::TangentVector random_tangent(const fen::TuckerPointPtr& p,
                                         std::uint64_t seed) {
  fen::TangentVector v;
  v.base = p;
  v.core_dir = random_tensor(p->core().dims(), seed);
  const auto& phi = p->node_factor();
  const auto& g = p->temporal_basis();
  Eigen::MatrixXd f = random_matrix(static_cast<int>(p->m()),
                                    static_cast<int>(p->s()), seed + 1);
  Eigen::MatrixXd b = random_matrix(static_cast<int>(p->L()),
                                    static_cast<int>(p->K()), seed + 3);
  f -= phi * (phi.transpose() * f);
  v.factor_dir1 = f;
  v.factor_dir2 = std::move(f);
  v.basis_dir = b - g * (g.transpose() * b);
  return v;
}

inline double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

inline double rel_fro_err(const fen::DenseTensor& got,
                          const fen::DenseTensor& want) {
  return fen::fnorm(fen::sub(got, want)) / std::max(1.0, fen::fnorm(want));
}

}  // namespace fentest
