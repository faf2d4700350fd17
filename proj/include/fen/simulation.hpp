#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "fen/fent_io.hpp"
#include "fen/manifold.hpp"
#include "fen/objective.hpp"
#include "fen/optimizer.hpp"
#include "fen/rng.hpp"
#include "fen/tensor.hpp"

namespace fen {

struct SimulationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! One synthetic-study configuration: ground-truth shape, noise variances
//! and missing fractions (the study grid), smoothing weight, fit settings,
//! replication count, and the root seed everything derives from.
struct SimConfig {
  index_t m = 10;
  index_t L = 50;
  index_t N = 5;
  index_t s_true = 3;
  index_t K_true = 8;
  double t_start = -1.0;
  double t_end = 1.0;
  std::vector<double> sigma2 = {0.01};
  std::vector<double> omega = {0.1};
  double alpha = 0.1;
  FitConfig fit;
  index_t replications = 10;
  std::uint64_t seed = 0;
};

inline void validate(const SimConfig& cfg) {
  if (cfg.m < 1 || cfg.L < 2 || cfg.N < 1)
    throw std::invalid_argument("simulation: need m >= 1, L >= 2, N >= 1");
  if (cfg.s_true < 1 || cfg.s_true > cfg.m)
    throw std::invalid_argument("simulation: s_true must lie in 1..m");
  if (cfg.K_true < 1 || cfg.K_true > std::min(cfg.L, cfg.s_true * cfg.s_true))
    throw std::invalid_argument(
        "simulation: K_true must lie in 1..min(L, s_true^2)");
  if (!(cfg.t_end > cfg.t_start))
    throw std::invalid_argument("simulation: grid end must exceed start");
  if (cfg.sigma2.empty() || cfg.omega.empty())
    throw std::invalid_argument("simulation: empty study grid");
  for (double s2 : cfg.sigma2)
    if (!(s2 >= 0.0))
      throw std::invalid_argument("simulation: noise variance must be >= 0");
  for (double om : cfg.omega)
    if (!(om >= 0.0) || om >= 1.0)
      throw std::invalid_argument(
          "simulation: missing fraction must lie in [0, 1)");
  if (!(cfg.alpha >= 0.0))
    throw std::invalid_argument("simulation: alpha must be >= 0");
  if (cfg.replications < 1)
    throw std::invalid_argument("simulation: need at least one replication");
}

namespace detail {

inline double rank_ratio(const Eigen::MatrixXd& a) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a);
  const auto& sv = svd.singularValues();
  if (sv.size() == 0 || !(sv(0) > 0.0)) return 0.0;
  return sv(sv.size() - 1) / sv(0);
}

}  // namespace detail

//! Ground-truth core: for each sample, K random orthogonal s x s slices,
//! redrawing any slice that leaves the growing stack rank deficient, so the
//! result has full matricization rank in all three decomposed modes.
inline DenseTensor generate_core(index_t s, index_t K, index_t N,
                                 std::uint64_t seed) {
  if (s < 1 || K < 1 || N < 1)
    throw std::invalid_argument("generate_core: dims must be positive");
  if (K > s * s)
    throw std::invalid_argument("generate_core: K exceeds s^2, slices cannot "
                                "stay independent");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  DenseTensor core({s, s, K, N});
  Eigen::MatrixXd stack(K, s * s);
  for (index_t n = 0; n < N; ++n) {
    for (index_t k = 0; k < K; ++k) {
      bool accepted = false;
      for (int attempt = 0; attempt < 1000 && !accepted; ++attempt) {
        Eigen::MatrixXd g(s, s);
        for (index_t c = 0; c < s; ++c)
          for (index_t r = 0; r < s; ++r) g(r, c) = gauss(rng);
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        Eigen::MatrixXd slice =
            qr.householderQ() * Eigen::MatrixXd::Identity(s, s);
        // correct column signs by R's diagonal so both orientation classes
        // occur; plain Householder Q has a fixed determinant per size, and
        // for s = 2 one class alone spans too small a subspace for K > 2
        for (index_t c = 0; c < s; ++c)
          if (qr.matrixQR()(c, c) < 0.0) slice.col(c) = -slice.col(c);
        for (index_t c = 0; c < s; ++c)
          for (index_t r = 0; r < s; ++r)
            stack(k, r * s + c) = slice(r, c);
        if (detail::rank_ratio(stack.topRows(k + 1)) > 1e-8) {
          for (index_t i = 0; i < s; ++i)
            for (index_t j = 0; j < s; ++j)
              core.at(i, j, k, n) = slice(i, j);
          accepted = true;
        }
      }
      if (!accepted)
        throw SimulationError(
            "generate_core: no rank-preserving slice after 1000 draws "
            "(sample " + std::to_string(n) + ", slice " + std::to_string(k) +
            ")");
    }
  }

  for (int mode : {1, 2, 3}) {
    const Eigen::MatrixXd unf = matricize(core, mode);
    if (!(detail::rank_ratio(unf) > 1e-8))
      throw SimulationError("generate_core: mode-" + std::to_string(mode) +
                            " matricization is rank deficient");
  }
  return core;
}

//! First s columns of a random order-m orthogonal matrix, sign-fixed.
inline Eigen::MatrixXd random_orthonormal_factor(index_t m, index_t s,
                                                 std::uint64_t seed) {
  if (s < 1 || s > m)
    throw std::invalid_argument("random_orthonormal_factor: need 1 <= s <= m");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd g(m, m);
  for (index_t c = 0; c < m; ++c)
    for (index_t r = 0; r < m; ++r) g(r, c) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, s);
  fix_column_signs(q);
  return q;
}

//! Sine waves sin(k pi t) sampled on the uniform grid, then orthonormalized
//! so the columns are admissible as a temporal basis. Gram-Schmidt (with a
//! reorthogonalization pass) keeps each column aligned with its wave, so the
//! first basis function is exactly the normalized first wave.
inline Eigen::MatrixXd fourier_basis(index_t L, index_t K, double t_start,
                                     double t_end) {
  if (K < 1 || K > L)
    throw std::invalid_argument("fourier_basis: need 1 <= K <= L");
  const TimeGrid grid{t_start, t_end, L};
  const double pi = std::acos(-1.0);
  Eigen::MatrixXd q(L, K);
  for (index_t k = 0; k < K; ++k) {
    Eigen::VectorXd col(L);
    for (index_t l = 0; l < L; ++l)
      col(l) = std::sin(static_cast<double>(k + 1) * pi * grid.point(l));
    if (col.norm() < 1e-12)
      throw SimulationError("fourier_basis: wave " + std::to_string(k + 1) +
                            " samples to zero on this grid");
    for (int pass = 0; pass < 2 && k > 0; ++pass)
      col -= q.leftCols(k) * (q.leftCols(k).transpose() * col);
    const double norm = col.norm();
    if (norm < 1e-12)
      throw SimulationError("fourier_basis: wave " + std::to_string(k + 1) +
                            " is linearly dependent on earlier waves");
    q.col(k) = col / norm;
  }
  fix_column_signs(q);
  return q;
}

inline DenseTensor add_noise(const DenseTensor& x, double sigma2,
                             std::uint64_t seed) {
  if (!(sigma2 >= 0.0))
    throw std::invalid_argument("add_noise: variance must be >= 0");
  if (sigma2 == 0.0) return x;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2));
  DenseTensor y = x;
  for (index_t i = 0; i < y.size(); ++i) y[i] += gauss(rng);
  return y;
}

//! Hide exactly round(omega * total) entries, chosen by seeded shuffle.
inline MaskTensor generate_mask(const std::vector<index_t>& dims, double omega,
                                std::uint64_t seed) {
  if (!(omega >= 0.0) || omega >= 1.0)
    throw std::invalid_argument("generate_mask: omega must lie in [0, 1)");
  MaskTensor mask = MaskTensor::full(dims);
  const index_t total = mask.size();
  const index_t hidden = std::llround(omega * static_cast<double>(total));
  if (hidden == 0) return mask;

  std::vector<index_t> idx(static_cast<std::size_t>(total));
  for (index_t i = 0; i < total; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::mt19937_64 rng(seed);
  for (index_t i = 0; i < hidden; ++i) {
    std::uniform_int_distribution<index_t> pick(i, total - 1);
    std::swap(idx[static_cast<std::size_t>(i)],
              idx[static_cast<std::size_t>(pick(rng))]);
    mask.set(idx[static_cast<std::size_t>(i)], false);
  }
  return mask;
}

//! Squared recovery error, over everything and over the hidden set only.
inline std::pair<double, double> se_metrics(const DenseTensor& xhat,
                                            const DenseTensor& x,
                                            const MaskTensor& mask) {
  check_same_dims(xhat, x, "se_metrics");
  check_mask_dims(x, mask, "se_metrics");
  detail::CompensatedSum full;
  detail::CompensatedSum miss;
  for (index_t i = 0; i < x.size(); ++i) {
    const double d = xhat[i] - x[i];
    full.add(d * d);
    if (!mask.get(i)) miss.add(d * d);
  }
  return {full.value(), miss.value()};
}

//! One synthetic instance: the on-manifold truth, its noisy observation,
//! and the observation mask.
struct SimInstance {
  TuckerPointPtr truth;
  DenseTensor noisy;
  MaskTensor mask;
};

//! Deterministic instance for one (sigma2, omega) cell; `seed` should come
//! from derive_seed(derive_seed(root, cell), replication).
inline SimInstance generate_instance(const SimConfig& cfg, double sigma2,
                                     double omega, std::uint64_t seed) {
  DenseTensor core =
      generate_core(cfg.s_true, cfg.K_true, cfg.N, derive_seed(seed, 1));
  Eigen::MatrixXd phi =
      random_orthonormal_factor(cfg.m, cfg.s_true, derive_seed(seed, 2));
  Eigen::MatrixXd g =
      fourier_basis(cfg.L, cfg.K_true, cfg.t_start, cfg.t_end);
  SimInstance inst;
  inst.truth = TuckerPoint::make(std::move(core), std::move(phi), std::move(g));
  inst.noisy = add_noise(inst.truth->value(), sigma2, derive_seed(seed, 3));
  inst.mask =
      generate_mask(inst.truth->value().dims(), omega, derive_seed(seed, 4));
  return inst;
}

//! Results of one (sigma2, omega) cell across replications. se_* are raw
//! squared F-norm sums; mse_mean/mse_std are per-entry (divided by the
//! tensor size), aggregated over the replications that completed.
struct ExperimentRow {
  double sigma2 = 0.0;
  double omega = 0.0;
  index_t numel = 0;
  std::vector<double> se_full;
  std::vector<double> se_miss;
  std::vector<index_t> iterations;
  std::vector<bool> converged;
  std::vector<bool> failed;
  std::vector<FitReport> reports;
  double mse_mean = 0.0;
  double mse_std = 0.0;
};

inline std::vector<ExperimentRow> run_experiment(const SimConfig& cfg) {
  validate(cfg);
  std::vector<ExperimentRow> rows;
  std::uint64_t cell = 0;
  for (double sigma2 : cfg.sigma2)
    for (double omega : cfg.omega) {
      ExperimentRow row;
      row.sigma2 = sigma2;
      row.omega = omega;
      const std::uint64_t cell_seed = derive_seed(cfg.seed, cell++);
      for (index_t rep = 0; rep < cfg.replications; ++rep) {
        const std::uint64_t rep_seed =
            derive_seed(cell_seed, static_cast<std::uint64_t>(rep));
        try {
          SimInstance inst = generate_instance(cfg, sigma2, omega, rep_seed);
          row.numel = inst.noisy.size();
          Problem prob(inst.noisy, inst.mask,
                       SmoothingPenalty::uniform(cfg.alpha, cfg.L),
                       TimeGrid{cfg.t_start, cfg.t_end, cfg.L});
          FitConfig fit_cfg = cfg.fit;
          fit_cfg.alpha.reset();
          fit_cfg.seed = rep_seed;
          auto [point, report] = fit(prob, fit_cfg);
          auto [se_full, se_miss] =
              se_metrics(point->value(), inst.truth->value(), inst.mask);
          row.se_full.push_back(se_full);
          row.se_miss.push_back(se_miss);
          row.iterations.push_back(report.iterations);
          row.converged.push_back(report.converged);
          row.failed.push_back(false);
          row.reports.push_back(std::move(report));
        } catch (const std::exception&) {
          const double nan = std::numeric_limits<double>::quiet_NaN();
          row.se_full.push_back(nan);
          row.se_miss.push_back(nan);
          row.iterations.push_back(0);
          row.converged.push_back(false);
          row.failed.push_back(true);
          row.reports.emplace_back();
        }
      }

      detail::CompensatedSum sum;
      index_t ok = 0;
      for (std::size_t r = 0; r < row.se_full.size(); ++r)
        if (!row.failed[r]) {
          sum.add(row.se_full[r] / static_cast<double>(row.numel));
          ++ok;
        }
      if (ok > 0) {
        row.mse_mean = sum.value() / static_cast<double>(ok);
        detail::CompensatedSum var;
        for (std::size_t r = 0; r < row.se_full.size(); ++r)
          if (!row.failed[r]) {
            const double d =
                row.se_full[r] / static_cast<double>(row.numel) - row.mse_mean;
            var.add(d * d);
          }
        row.mse_std =
            ok > 1 ? std::sqrt(var.value() / static_cast<double>(ok - 1))
                   : 0.0;
      } else {
        row.mse_mean = std::numeric_limits<double>::quiet_NaN();
        row.mse_std = std::numeric_limits<double>::quiet_NaN();
      }
      rows.push_back(std::move(row));
    }
  return rows;
}

inline std::string results_csv_text(const std::vector<ExperimentRow>& rows) {
  std::ostringstream out;
  out << "sigma2,omega,rep,se_full,se_miss,iterations,converged\n";
  out << std::setprecision(17);
  for (const auto& row : rows)
    for (std::size_t rep = 0; rep < row.se_full.size(); ++rep)
      out << row.sigma2 << ',' << row.omega << ',' << rep << ','
          << row.se_full[rep] << ',' << row.se_miss[rep] << ','
          << row.iterations[rep] << ',' << (row.converged[rep] ? 1 : 0)
          << '\n';
  return out.str();
}

inline void write_results_csv(const std::filesystem::path& path,
                              const std::vector<ExperimentRow>& rows) {
  write_file_atomic(path, results_csv_text(rows));
}

//! Minimal standalone convergence plot: objective (solid) and gradient norm
//! (dashed) on a log scale against iteration count.
inline std::string trace_svg_text(const FitReport& report) {
  const double width = 640.0, height = 360.0, pad = 40.0;
  std::vector<double> logs_obj, logs_grad;
  for (double v : report.objective_trace)
    logs_obj.push_back(std::log10(std::max(v, 1e-300)));
  for (double v : report.grad_norm_trace)
    logs_grad.push_back(std::log10(std::max(v, 1e-300)));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* series : {&logs_obj, &logs_grad})
    for (double v : *series) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const std::size_t steps =
      std::max<std::size_t>(report.objective_trace.size(), 2) - 1;
  auto x_of = [&](std::size_t k) {
    return pad + (width - 2 * pad) * static_cast<double>(k) /
                     static_cast<double>(steps);
  };
  auto y_of = [&](double v) {
    return height - pad - (height - 2 * pad) * (v - lo) / (hi - lo);
  };
  auto polyline = [&](const std::vector<double>& ys, std::size_t x0,
                      const char* style) {
    std::ostringstream p;
    p << "  <polyline fill=\"none\" " << style << " points=\"";
    for (std::size_t k = 0; k < ys.size(); ++k)
      p << x_of(k + x0) << ',' << y_of(ys[k]) << ' ';
    p << "\"/>\n";
    return p.str();
  };

  std::ostringstream svg;
  svg << std::setprecision(6);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << ' '
      << height << "\">\n";
  svg << "  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "  <line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\""
      << width - pad << "\" y2=\"" << height - pad
      << "\" stroke=\"black\"/>\n";
  svg << "  <line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad
      << "\" y2=\"" << height - pad << "\" stroke=\"black\"/>\n";
  svg << polyline(logs_obj, 0, "stroke=\"#1f77b4\" stroke-width=\"1.5\"");
  if (!logs_grad.empty())
    svg << polyline(logs_grad, 1,
                    "stroke=\"#d62728\" stroke-width=\"1.5\" "
                    "stroke-dasharray=\"4 3\"");
  svg << "  <text x=\"" << pad << "\" y=\"" << pad - 12
      << "\" font-size=\"12\" fill=\"#1f77b4\">log10 objective</text>\n";
  svg << "  <text x=\"" << pad + 130 << "\" y=\"" << pad - 12
      << "\" font-size=\"12\" fill=\"#d62728\">log10 gradient norm</text>\n";
  svg << "  <text x=\"" << width - pad - 60 << "\" y=\"" << height - pad + 24
      << "\" font-size=\"12\">iteration</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

inline void write_trace_svg(const std::filesystem::path& path,
                            const FitReport& report) {
  write_file_atomic(path, trace_svg_text(report));
}

}  // namespace fen
