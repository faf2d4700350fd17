#pragma once

// Dense tensors of order 1..4 in row-major (lexicographic) layout, packed
// observation masks, and the matricization / mode-product / inner-product
// kernels everything else is built on.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fen {

using index_t = std::int64_t;

namespace detail {

inline std::string dims_to_string(const std::vector<index_t>& d) {
  std::string s = "(";
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(d[i]);
  }
  return s + ")";
}

//! Neumaier-compensated accumulator; reductions stay near machine precision
//! regardless of ordering or magnitude spread.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

//! Dense numeric tensor, order 1..4. Storage is row-major: the first index
//! is slowest, the last fastest. Element access is 0-based; mode arguments
//! throughout the library are 1-based to match the usual multilinear
//! notation (mode-1 product, mode-3 matricization, ...).
class DenseTensor {
 public:
  DenseTensor() = default;

  explicit DenseTensor(std::vector<index_t> dims, double fill = 0.0)
      : dims_(std::move(dims)) {
    validate_dims(dims_);
    values_.assign(static_cast<std::size_t>(count(dims_)), fill);
  }

  static DenseTensor from_values(std::vector<index_t> dims,
                                 std::vector<double> values) {
    validate_dims(dims);
    if (static_cast<index_t>(values.size()) != count(dims))
      throw std::invalid_argument(
          "DenseTensor: value count " + std::to_string(values.size()) +
          " does not match dims " + detail::dims_to_string(dims));
    DenseTensor t;
    t.dims_ = std::move(dims);
    t.values_ = std::move(values);
    return t;
  }

  int ndims() const { return static_cast<int>(dims_.size()); }
  const std::vector<index_t>& dims() const { return dims_; }

  //! Size of one mode, 1-based.
  index_t dim(int mode) const {
    check_mode(mode);
    return dims_[static_cast<std::size_t>(mode - 1)];
  }

  index_t size() const { return static_cast<index_t>(values_.size()); }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }

  double operator[](index_t flat) const {
    return values_[static_cast<std::size_t>(flat)];
  }
  double& operator[](index_t flat) {
    return values_[static_cast<std::size_t>(flat)];
  }

  //! 0-based multi-index access; the index count must match the order.
  template <typename... Ix>
  double& at(Ix... ix) {
    return values_[static_cast<std::size_t>(flat_index(ix...))];
  }
  template <typename... Ix>
  double at(Ix... ix) const {
    return values_[static_cast<std::size_t>(flat_index(ix...))];
  }

  template <typename... Ix>
  index_t flat_index(Ix... ix) const {
    constexpr int n = sizeof...(Ix);
    if (n != ndims())
      throw std::invalid_argument("DenseTensor::at: " + std::to_string(n) +
                                  " indices for order-" +
                                  std::to_string(ndims()) + " tensor");
    const index_t idx[n] = {static_cast<index_t>(ix)...};
    index_t flat = 0;
    for (int j = 0; j < n; ++j) flat = flat * dims_[j] + idx[j];
    return flat;
  }

  //! Product of the trailing dims after `mode` (1-based); the stride of that
  //! mode's index in the flat layout.
  index_t stride(int mode) const {
    check_mode(mode);
    index_t s = 1;
    for (std::size_t j = static_cast<std::size_t>(mode); j < dims_.size(); ++j)
      s *= dims_[j];
    return s;
  }

 private:
  static index_t count(const std::vector<index_t>& dims) {
    index_t n = 1;
    for (index_t d : dims) n *= d;
    return n;
  }
  static void validate_dims(const std::vector<index_t>& dims) {
    if (dims.empty() || dims.size() > 4)
      throw std::invalid_argument("DenseTensor: order must be 1..4, got " +
                                  std::to_string(dims.size()));
    for (index_t d : dims)
      if (d <= 0)
        throw std::invalid_argument("DenseTensor: nonpositive dim in " +
                                    detail::dims_to_string(dims));
  }
  void check_mode(int mode) const {
    if (mode < 1 || mode > ndims())
      throw std::invalid_argument("DenseTensor: mode " + std::to_string(mode) +
                                  " out of range for order-" +
                                  std::to_string(ndims()) + " tensor");
  }

  std::vector<index_t> dims_;
  std::vector<double> values_;
};

inline void check_same_dims(const DenseTensor& a, const DenseTensor& b,
                            const char* op) {
  if (a.dims() != b.dims())
    throw std::invalid_argument(std::string(op) + ": dims " +
                                detail::dims_to_string(a.dims()) + " vs " +
                                detail::dims_to_string(b.dims()));
}

//! Mode-k matricization. Row r is the mode-k index; columns run over the
//! remaining modes in ascending order with the last index fastest, so for a
//! 3-way tensor and k = 1 the column of (i2,i3) is i2*d3 + i3 (0-based),
//! matching the classical 1-based map (i2-1)*d3 + i3.
inline Eigen::MatrixXd matricize(const DenseTensor& t, int mode) {
  const index_t rows = t.dim(mode);
  const index_t cols = t.size() / rows;
  const index_t s = t.stride(mode);  // contiguous block under one mode index
  const index_t block = s * rows;
  Eigen::MatrixXd m(rows, cols);
  const double* v = t.data();
  for (index_t flat = 0; flat < t.size(); ++flat) {
    const index_t hi = flat / block;
    const index_t rem = flat - hi * block;
    const index_t r = rem / s;
    const index_t lo = rem - r * s;
    m(r, hi * s + lo) = v[flat];
  }
  return m;
}

//! Inverse of matricize: refolds an r x (total/r) matrix along `mode` into a
//! tensor with the given dims.
inline DenseTensor fold(const Eigen::MatrixXd& m, int mode,
                        std::vector<index_t> dims) {
  DenseTensor t(std::move(dims));
  if (mode < 1 || mode > t.ndims())
    throw std::invalid_argument("fold: mode " + std::to_string(mode) +
                                " out of range for order-" +
                                std::to_string(t.ndims()) + " tensor");
  const index_t rows = t.dim(mode);
  const index_t cols = t.size() / rows;
  if (m.rows() != rows || m.cols() != cols)
    throw std::invalid_argument(
        "fold: matrix is " + std::to_string(m.rows()) + "x" +
        std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
        std::to_string(cols) + " for dims " + detail::dims_to_string(t.dims()));
  const index_t s = t.stride(mode);
  const index_t block = s * rows;
  double* v = t.data();
  for (index_t flat = 0; flat < t.size(); ++flat) {
    const index_t hi = flat / block;
    const index_t rem = flat - hi * block;
    const index_t r = rem / s;
    const index_t lo = rem - r * s;
    v[flat] = m(r, hi * s + lo);
  }
  return t;
}

//! Marginal (mode-k) product T x_k C: contracts the mode-k index of T with
//! the columns of C, so the result's mode-k size is C.rows().
inline DenseTensor mode_product(const DenseTensor& t, int mode,
                                const Eigen::MatrixXd& c) {
  if (c.cols() != t.dim(mode))
    throw std::invalid_argument(
        "mode_product: mode " + std::to_string(mode) + " size " +
        std::to_string(t.dim(mode)) + " does not match matrix cols " +
        std::to_string(c.cols()));
  Eigen::MatrixXd prod = c * matricize(t, mode);
  std::vector<index_t> dims = t.dims();
  dims[static_cast<std::size_t>(mode - 1)] = c.rows();
  return fold(prod, mode, std::move(dims));
}

//! Frobenius inner product with compensated summation.
inline double inner(const DenseTensor& a, const DenseTensor& b) {
  check_same_dims(a, b, "inner");
  detail::CompensatedSum acc;
  const double* pa = a.data();
  const double* pb = b.data();
  for (index_t i = 0; i < a.size(); ++i) acc.add(pa[i] * pb[i]);
  return acc.value();
}

inline double fnorm(const DenseTensor& a) {
  detail::CompensatedSum acc;
  const double* pa = a.data();
  for (index_t i = 0; i < a.size(); ++i) acc.add(pa[i] * pa[i]);
  return std::sqrt(acc.value());
}

inline DenseTensor add(const DenseTensor& a, const DenseTensor& b) {
  check_same_dims(a, b, "add");
  DenseTensor r = a;
  for (index_t i = 0; i < r.size(); ++i) r[i] += b[i];
  return r;
}

inline DenseTensor sub(const DenseTensor& a, const DenseTensor& b) {
  check_same_dims(a, b, "sub");
  DenseTensor r = a;
  for (index_t i = 0; i < r.size(); ++i) r[i] -= b[i];
  return r;
}

inline DenseTensor scaled(const DenseTensor& a, double c) {
  DenseTensor r = a;
  for (index_t i = 0; i < r.size(); ++i) r[i] *= c;
  return r;
}

//! y += c * x
inline void axpy(DenseTensor& y, double c, const DenseTensor& x) {
  check_same_dims(y, x, "axpy");
  for (index_t i = 0; i < y.size(); ++i) y[i] += c * x[i];
}

inline DenseTensor operator+(const DenseTensor& a, const DenseTensor& b) {
  return add(a, b);
}
inline DenseTensor operator-(const DenseTensor& a, const DenseTensor& b) {
  return sub(a, b);
}
inline DenseTensor operator*(double c, const DenseTensor& a) {
  return scaled(a, c);
}

//! Observation mask over the same index space as a DenseTensor, one bit per
//! entry (1 = observed). Bits pack eight entries per byte in flat order, bit
//! 0 of each byte holding the earliest index.
class MaskTensor {
 public:
  MaskTensor() = default;

  //! All entries unobserved.
  explicit MaskTensor(std::vector<index_t> dims) : dims_(std::move(dims)) {
    DenseTensor probe(dims_);  // reuse dim validation
    total_ = probe.size();
    bytes_.assign(static_cast<std::size_t>((total_ + 7) / 8), 0);
    count_ = 0;
  }

  //! All entries observed.
  static MaskTensor full(std::vector<index_t> dims) {
    MaskTensor m(std::move(dims));
    for (auto& b : m.bytes_) b = 0xFF;
    m.clear_tail();
    m.count_ = m.total_;
    return m;
  }

  int ndims() const { return static_cast<int>(dims_.size()); }
  const std::vector<index_t>& dims() const { return dims_; }
  index_t size() const { return total_; }
  index_t observed_count() const { return count_; }

  bool get(index_t flat) const {
    return (bytes_[static_cast<std::size_t>(flat >> 3)] >> (flat & 7)) & 1;
  }

  void set(index_t flat, bool observed) {
    const std::size_t byte = static_cast<std::size_t>(flat >> 3);
    const std::uint8_t bit = static_cast<std::uint8_t>(1u << (flat & 7));
    const bool cur = bytes_[byte] & bit;
    if (cur == observed) return;
    if (observed) {
      bytes_[byte] |= bit;
      ++count_;
    } else {
      bytes_[byte] &= static_cast<std::uint8_t>(~bit);
      --count_;
    }
  }

  template <typename... Ix>
  bool at(Ix... ix) const {
    return get(flat_of(ix...));
  }

  template <typename... Ix>
  index_t flat_of(Ix... ix) const {
    constexpr int n = sizeof...(Ix);
    if (n != ndims())
      throw std::invalid_argument("MaskTensor: " + std::to_string(n) +
                                  " indices for order-" +
                                  std::to_string(ndims()) + " mask");
    const index_t idx[n] = {static_cast<index_t>(ix)...};
    index_t flat = 0;
    for (int j = 0; j < n; ++j) flat = flat * dims_[j] + idx[j];
    return flat;
  }

  template <typename... Ix>
  void set_at(bool observed, Ix... ix) {
    set(flat_of(ix...), observed);
  }

  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

  //! Replace the packed payload wholesale (deserialization path).
  static MaskTensor from_bytes(std::vector<index_t> dims,
                               std::vector<std::uint8_t> bytes) {
    MaskTensor m(std::move(dims));
    if (bytes.size() != m.bytes_.size())
      throw std::invalid_argument(
          "MaskTensor: payload is " + std::to_string(bytes.size()) +
          " bytes, expected " + std::to_string(m.bytes_.size()));
    m.bytes_ = std::move(bytes);
    m.clear_tail();
    m.recount();
    return m;
  }

 private:
  void clear_tail() {
    const int tail = static_cast<int>(total_ & 7);
    if (tail != 0 && !bytes_.empty())
      bytes_.back() &= static_cast<std::uint8_t>((1u << tail) - 1u);
  }
  void recount() {
    count_ = 0;
    for (index_t i = 0; i < total_; ++i) count_ += get(i) ? 1 : 0;
  }

  std::vector<index_t> dims_;
  std::vector<std::uint8_t> bytes_;
  index_t total_ = 0;
  index_t count_ = 0;
};

inline void check_mask_dims(const DenseTensor& a, const MaskTensor& m,
                            const char* op) {
  if (a.dims() != m.dims())
    throw std::invalid_argument(std::string(op) + ": tensor dims " +
                                detail::dims_to_string(a.dims()) +
                                " vs mask dims " +
                                detail::dims_to_string(m.dims()));
}

//! P_Omega: zero out unobserved entries.
inline DenseTensor mask_apply(const DenseTensor& a, const MaskTensor& m) {
  check_mask_dims(a, m, "mask_apply");
  DenseTensor r = a;
  for (index_t i = 0; i < r.size(); ++i)
    if (!m.get(i)) r[i] = 0.0;
  return r;
}

inline MaskTensor complement(const MaskTensor& m) {
  MaskTensor c(m.dims());
  for (index_t i = 0; i < m.size(); ++i) c.set(i, !m.get(i));
  return c;
}

//! sum over observed entries of a[i]*b[i]; equals inner(P(a), P(b)).
inline double masked_inner(const DenseTensor& a, const DenseTensor& b,
                           const MaskTensor& m) {
  check_same_dims(a, b, "masked_inner");
  check_mask_dims(a, m, "masked_inner");
  detail::CompensatedSum acc;
  for (index_t i = 0; i < a.size(); ++i)
    if (m.get(i)) acc.add(a[i] * b[i]);
  return acc.value();
}

//! P_Omega(a - b) as a dense tensor.
inline DenseTensor masked_diff(const DenseTensor& a, const DenseTensor& b,
                               const MaskTensor& m) {
  check_same_dims(a, b, "masked_diff");
  check_mask_dims(a, m, "masked_diff");
  DenseTensor r(a.dims());
  for (index_t i = 0; i < r.size(); ++i)
    if (m.get(i)) r[i] = a[i] - b[i];
  return r;
}

//! sum over observed entries of (a-b)^2.
inline double masked_sq_error(const DenseTensor& a, const DenseTensor& b,
                              const MaskTensor& m) {
  check_same_dims(a, b, "masked_sq_error");
  check_mask_dims(a, m, "masked_sq_error");
  detail::CompensatedSum acc;
  for (index_t i = 0; i < a.size(); ++i)
    if (m.get(i)) {
      const double d = a[i] - b[i];
      acc.add(d * d);
    }
  return acc.value();
}

inline Eigen::MatrixXd kronecker(const Eigen::MatrixXd& a,
                                 const Eigen::MatrixXd& b) {
  Eigen::MatrixXd k(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      k.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return k;
}

}  // namespace fen
