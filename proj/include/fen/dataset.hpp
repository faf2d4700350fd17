#pragma once

// Origin-destination event ingestion and the train/test refit used on real
// data. A CSV of flow records becomes a functional adjacency tensor plus an
// observation mask: records aggregate by sum into (origin, destination,
// sample, bin) cells, a cell with at least one record counts as observed
// (a recorded zero is a real zero, absence of records is missingness), and
// edges whose mean accumulated flow per sample falls below a threshold are
// masked out entirely. Self-loop records are dropped; diagonal fibers stay
// unobserved.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
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
#include "fen/tensor.hpp"

namespace fen {

class IngestError : public std::runtime_error {
 public:
  explicit IngestError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ODRecord {
  std::string origin;
  std::string destination;
  std::string sample;
  index_t time_bin = 0;  // 0-based after parsing
  double value = 0.0;
};

struct Dataset {
  DenseTensor data;
  MaskTensor mask;
  std::vector<std::string> nodes;    // sorted ids; position = tensor index
  std::vector<std::string> samples;  // sorted ids; position = mode-4 index
  TimeGrid grid{-1.0, 1.0, 2};
  std::optional<Eigen::MatrixXd> edge_means;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

inline double parse_double(const std::string& s, index_t line_no,
                           const char* what) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0' || !std::isfinite(v))
    throw IngestError("line " + std::to_string(line_no) + ": bad " + what +
                      " \"" + s + "\"");
  return v;
}

//! The time field gives either a grid bin (integer in 1..L) or a raw
//! timestamp in [t_start, t_end]; timestamps map to the bin whose grid
//! point closes the enclosing interval.
inline index_t parse_time_bin(const std::string& s, const TimeGrid& grid,
                              index_t line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const long long as_int = std::strtoll(begin, &end, 10);
  if (end != begin && *end == '\0' && as_int >= 1 && as_int <= grid.length)
    return static_cast<index_t>(as_int - 1);

  const double stamp = parse_double(s, line_no, "time");
  if (!(stamp >= grid.t_start) || !(stamp <= grid.t_end))
    throw IngestError("line " + std::to_string(line_no) + ": time " + s +
                      " is neither a bin in 1.." +
                      std::to_string(grid.length) + " nor a timestamp in [" +
                      std::to_string(grid.t_start) + ", " +
                      std::to_string(grid.t_end) + "]");
  const double span = grid.t_end - grid.t_start;
  const double pos =
      (stamp - grid.t_start) / span * static_cast<double>(grid.length);
  index_t bin = static_cast<index_t>(std::ceil(pos));
  bin = std::max<index_t>(bin, 1);
  bin = std::min<index_t>(bin, grid.length);
  return bin - 1;
}

inline index_t index_of(const std::vector<std::string>& sorted,
                        const std::string& id) {
  const auto it = std::lower_bound(sorted.begin(), sorted.end(), id);
  return static_cast<index_t>(it - sorted.begin());
}

}  // namespace detail

inline std::vector<ODRecord> parse_od_csv(const std::string& text,
                                          const TimeGrid& grid) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "origin,destination,sample,time,value")
    throw IngestError(
        "line 1: header must be \"origin,destination,sample,time,value\", "
        "got \"" + line + "\"");

  std::vector<ODRecord> records;
  index_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    if (fields.size() != 5)
      throw IngestError("line " + std::to_string(line_no) + ": expected 5 "
                        "fields, got " + std::to_string(fields.size()));
    if (fields[0].empty() || fields[1].empty() || fields[2].empty())
      throw IngestError("line " + std::to_string(line_no) +
                        ": empty id field");
    ODRecord rec;
    rec.origin = fields[0];
    rec.destination = fields[1];
    rec.sample = fields[2];
    rec.time_bin = detail::parse_time_bin(fields[3], grid, line_no);
    rec.value = detail::parse_double(fields[4], line_no, "value");
    records.push_back(std::move(rec));
  }
  return records;
}

inline Dataset ingest_od_records(std::vector<ODRecord> records,
                                 const TimeGrid& grid, double threshold,
                                 bool center) {
  if (grid.length < 2)
    throw IngestError("grid must have at least 2 points");
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const ODRecord& r) {
                                 return r.origin == r.destination;
                               }),
                records.end());
  if (records.empty()) throw IngestError("no usable records (self-loops are "
                                         "dropped)");

  std::vector<std::string> nodes, samples;
  for (const ODRecord& r : records) {
    nodes.push_back(r.origin);
    nodes.push_back(r.destination);
    samples.push_back(r.sample);
  }
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::sort(samples.begin(), samples.end());
  samples.erase(std::unique(samples.begin(), samples.end()), samples.end());

  const index_t m = static_cast<index_t>(nodes.size());
  const index_t N = static_cast<index_t>(samples.size());
  const index_t L = grid.length;

  Dataset ds;
  ds.nodes = std::move(nodes);
  ds.samples = std::move(samples);
  ds.grid = grid;
  ds.data = DenseTensor({m, m, L, N});
  ds.mask = MaskTensor({m, m, L, N});
  for (const ODRecord& r : records) {
    const index_t i = detail::index_of(ds.nodes, r.origin);
    const index_t j = detail::index_of(ds.nodes, r.destination);
    const index_t n = detail::index_of(ds.samples, r.sample);
    ds.data.at(i, j, r.time_bin, n) += r.value;
    ds.mask.set_at(true, i, j, r.time_bin, n);
  }

  // sparse edges carry too little signal; below the mean-flow-per-sample
  // threshold the whole edge becomes unobserved
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < m; ++j) {
      if (i == j) continue;
      detail::CompensatedSum total;
      for (index_t l = 0; l < L; ++l)
        for (index_t n = 0; n < N; ++n)
          if (ds.mask.at(i, j, l, n)) total.add(ds.data.at(i, j, l, n));
      if (total.value() / static_cast<double>(N) < threshold)
        for (index_t l = 0; l < L; ++l)
          for (index_t n = 0; n < N; ++n) {
            ds.mask.set_at(false, i, j, l, n);
            ds.data.at(i, j, l, n) = 0.0;
          }
    }
  if (ds.mask.observed_count() == 0)
    throw IngestError("threshold " + std::to_string(threshold) +
                      " masked out every edge");

  if (center) {
    Eigen::MatrixXd means = Eigen::MatrixXd::Zero(m, m);
    for (index_t i = 0; i < m; ++i)
      for (index_t j = 0; j < m; ++j) {
        detail::CompensatedSum sum;
        index_t count = 0;
        for (index_t l = 0; l < L; ++l)
          for (index_t n = 0; n < N; ++n)
            if (ds.mask.at(i, j, l, n)) {
              sum.add(ds.data.at(i, j, l, n));
              ++count;
            }
        if (count == 0) continue;
        const double mean = sum.value() / static_cast<double>(count);
        means(i, j) = mean;
        for (index_t l = 0; l < L; ++l)
          for (index_t n = 0; n < N; ++n)
            if (ds.mask.at(i, j, l, n)) ds.data.at(i, j, l, n) -= mean;
      }
    ds.edge_means = std::move(means);
  }
  return ds;
}

inline Dataset ingest_od_csv(const std::filesystem::path& path, index_t L,
                             double t_start, double t_end, double threshold,
                             bool center = false) {
  if (L < 2) throw IngestError("L must be at least 2");
  if (!(t_end > t_start)) throw IngestError("grid end must exceed start");
  const std::vector<std::uint8_t> bytes = read_file(path);
  const TimeGrid grid{t_start, t_end, L};
  return ingest_od_records(
      parse_od_csv(std::string(bytes.begin(), bytes.end()), grid), grid,
      threshold, center);
}

//! Observed entries back to CSV, bins 1-based, centering means added back,
//! so re-ingesting with the same parameters reproduces the Dataset.
inline std::string dataset_to_csv(const Dataset& ds) {
  std::ostringstream out;
  out << "origin,destination,sample,time,value\n";
  out << std::setprecision(17);
  const index_t m = static_cast<index_t>(ds.nodes.size());
  const index_t N = static_cast<index_t>(ds.samples.size());
  for (index_t i = 0; i < m; ++i)
    for (index_t j = 0; j < m; ++j)
      for (index_t n = 0; n < N; ++n)
        for (index_t l = 0; l < ds.grid.length; ++l) {
          if (!ds.mask.at(i, j, l, n)) continue;
          double value = ds.data.at(i, j, l, n);
          if (ds.edge_means)
            value += (*ds.edge_means)(static_cast<Eigen::Index>(i),
                                      static_cast<Eigen::Index>(j));
          out << ds.nodes[static_cast<std::size_t>(i)] << ','
              << ds.nodes[static_cast<std::size_t>(j)] << ','
              << ds.samples[static_cast<std::size_t>(n)] << ',' << (l + 1)
              << ',' << value << '\n';
        }
  return out.str();
}

enum class RefitMode { projected, masked_ls };

inline RefitMode refit_mode_from_string(const std::string& s) {
  if (s == "projected") return RefitMode::projected;
  if (s == "masked-ls" || s == "masked_ls") return RefitMode::masked_ls;
  throw std::invalid_argument("unknown refit mode \"" + s +
                              "\" (expected projected or masked-ls)");
}

//! Re-estimates only the core against new data, holding the fitted factors
//! fixed. `projected` interpolation-fills the unobserved entries and
//! projects onto the factor span; `masked_ls` solves the masked
//! least-squares problem per sample, which needs enough observations to
//! determine all s*s*K core coefficients.
inline std::pair<DenseTensor, DenseTensor> train_test_refit(
    const TuckerPoint& train, const DenseTensor& y_test,
    const MaskTensor& mask_test, RefitMode mode) {
  check_mask_dims(y_test, mask_test, "train_test_refit");
  if (y_test.ndims() != 4)
    throw std::invalid_argument("train_test_refit: data must be 4-way");
  if (y_test.dim(1) != train.m() || y_test.dim(2) != train.m() ||
      y_test.dim(3) != train.L())
    throw std::invalid_argument(
        "train_test_refit: data dims " + detail::dims_to_string(y_test.dims()) +
        " do not match the fitted factors (m = " + std::to_string(train.m()) +
        ", L = " + std::to_string(train.L()) + ")");

  const Eigen::MatrixXd& phi = train.node_factor();
  const Eigen::MatrixXd& g = train.temporal_basis();
  const index_t s = train.s(), K = train.K();
  const index_t n_test = y_test.dim(4);

  DenseTensor core({s, s, K, n_test});
  if (mode == RefitMode::projected) {
    DenseTensor filled = interpolation_fill(y_test, mask_test);
    filled = mode_product(filled, 1, phi.transpose());
    filled = mode_product(filled, 2, phi.transpose());
    core = mode_product(filled, 3, g.transpose());
  } else {
    const index_t m = train.m(), L = train.L();
    const index_t unknowns = s * s * K;
    for (index_t n = 0; n < n_test; ++n) {
      index_t rows = 0;
      for (index_t i = 0; i < m; ++i)
        for (index_t j = 0; j < m; ++j)
          for (index_t l = 0; l < L; ++l)
            if (mask_test.at(i, j, l, n)) ++rows;
      if (rows < unknowns)
        throw std::invalid_argument(
            "train_test_refit: sample " + std::to_string(n) + " has " +
            std::to_string(rows) + " observations for " +
            std::to_string(unknowns) + " core coefficients");

      Eigen::MatrixXd a(rows, unknowns);
      Eigen::VectorXd b(rows);
      index_t row = 0;
      for (index_t i = 0; i < m; ++i)
        for (index_t j = 0; j < m; ++j)
          for (index_t l = 0; l < L; ++l) {
            if (!mask_test.at(i, j, l, n)) continue;
            for (index_t p = 0; p < s; ++p)
              for (index_t q = 0; q < s; ++q) {
                const double pq = phi(i, p) * phi(j, q);
                for (index_t k = 0; k < K; ++k)
                  a(row, (p * s + q) * K + k) = pq * g(l, k);
              }
            b(row) = y_test.at(i, j, l, n);
            ++row;
          }

      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
      if (qr.rank() < unknowns)
        throw std::invalid_argument(
            "train_test_refit: sample " + std::to_string(n) +
            " is under-determined, the observed pattern does not pin down "
            "all core coefficients");
      const Eigen::VectorXd sol = qr.solve(b);
      for (index_t p = 0; p < s; ++p)
        for (index_t q = 0; q < s; ++q)
          for (index_t k = 0; k < K; ++k)
            core.at(p, q, k, n) = sol((p * s + q) * K + k);
    }
  }

  DenseTensor xhat = mode_product(core, 1, phi);
  xhat = mode_product(xhat, 2, phi);
  xhat = mode_product(xhat, 3, g);
  return {std::move(core), std::move(xhat)};
}

}  // namespace fen
