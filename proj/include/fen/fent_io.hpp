#pragma once

// FENT container: a minimal binary format for dense tensors and observation
// masks.
//
//   magic   "FENT" (4 bytes)
//   version u32 little-endian, currently 1
//   ndims   u8
//   dims    ndims x u64 little-endian
//   payload dense: total x f64 little-endian, lexicographic (row-major) order
//           mask:  ceil(total/8) bytes, packed flat order, bit 0 of each
//                  byte = earliest index; tail bits must be zero
//
// Readers validate structure strictly and fail with FormatError. All file
// writes in this library go through write_file_atomic (temp + rename) so a
// crash never leaves a truncated artifact behind.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "fen/tensor.hpp"

namespace fen {

class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& msg)
      : std::runtime_error("fent: " + msg) {}
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

class ByteReader {
 public:
  ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
  std::size_t remaining() const { return n_ - pos_; }
  const std::uint8_t* cursor() const { return p_ + pos_; }
  void skip(std::size_t n) { pos_ += n; }

  std::uint8_t u8() {
    need(1);
    return p_[pos_++];
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(p_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > n_) throw FormatError("truncated stream");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace detail

//! Write bytes to `path` atomically: a unique temp file in the same
//! directory is renamed over the target once fully flushed.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path dir = path.has_parent_path() ? path.parent_path() : ".";
  std::error_code ec;
  fs::create_directories(dir, ec);
  std::random_device rd;
  const fs::path tmp =
      dir / (path.filename().string() + ".tmp" + std::to_string(rd()));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      fs::remove(tmp, ec);
      throw std::runtime_error("short write to " + tmp.string());
    }
  }
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw std::runtime_error("cannot rename into " + path.string());
  }
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

inline std::string encode_tensor(const DenseTensor& t) {
  std::string out;
  out.reserve(13 + 8 * t.dims().size() + 8 * static_cast<std::size_t>(t.size()));
  out += "FENT";
  detail::put_u32(out, 1);
  out.push_back(static_cast<char>(t.ndims()));
  for (index_t d : t.dims()) detail::put_u64(out, static_cast<std::uint64_t>(d));
  for (index_t i = 0; i < t.size(); ++i) detail::put_f64(out, t[i]);
  return out;
}

inline std::string encode_mask(const MaskTensor& m) {
  std::string out;
  out += "FENT";
  detail::put_u32(out, 1);
  out.push_back(static_cast<char>(m.ndims()));
  for (index_t d : m.dims()) detail::put_u64(out, static_cast<std::uint64_t>(d));
  out.append(reinterpret_cast<const char*>(m.bytes().data()), m.bytes().size());
  return out;
}

namespace detail {

inline std::vector<index_t> read_header(ByteReader& r, const char* kind) {
  if (r.remaining() < 4 || std::memcmp(r.cursor(), "FENT", 4) != 0)
    throw FormatError(std::string("bad magic for ") + kind);
  r.skip(4);
  const std::uint32_t version = r.u32();
  if (version != 1)
    throw FormatError("unsupported version " + std::to_string(version));
  const int nd = r.u8();
  if (nd < 1 || nd > 4)
    throw FormatError("order " + std::to_string(nd) + " outside 1..4");
  std::vector<index_t> dims(static_cast<std::size_t>(nd));
  for (auto& d : dims) {
    const std::uint64_t v = r.u64();
    if (v == 0 || v > (1ull << 31)) throw FormatError("implausible dim");
    d = static_cast<index_t>(v);
  }
  return dims;
}

}  // namespace detail

inline DenseTensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  std::vector<index_t> dims = detail::read_header(r, "tensor");
  index_t total = 1;
  for (index_t d : dims) total *= d;
  if (r.remaining() != static_cast<std::size_t>(total) * 8)
    throw FormatError("payload is " + std::to_string(r.remaining()) +
                      " bytes, expected " + std::to_string(total * 8));
  std::vector<double> values(static_cast<std::size_t>(total));
  for (auto& v : values) v = r.f64();
  return DenseTensor::from_values(std::move(dims), std::move(values));
}

inline MaskTensor decode_mask(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  std::vector<index_t> dims = detail::read_header(r, "mask");
  index_t total = 1;
  for (index_t d : dims) total *= d;
  const std::size_t nbytes = static_cast<std::size_t>((total + 7) / 8);
  if (r.remaining() != nbytes)
    throw FormatError("payload is " + std::to_string(r.remaining()) +
                      " bytes, expected " + std::to_string(nbytes));
  std::vector<std::uint8_t> packed(r.cursor(), r.cursor() + nbytes);
  const int tail = static_cast<int>(total & 7);
  if (tail != 0 && nbytes > 0 &&
      (packed.back() & ~static_cast<std::uint8_t>((1u << tail) - 1u)) != 0)
    throw FormatError("nonzero tail bits in mask payload");
  return MaskTensor::from_bytes(std::move(dims), std::move(packed));
}

inline void write_tensor(const std::filesystem::path& path,
                         const DenseTensor& t) {
  write_file_atomic(path, encode_tensor(t));
}

inline DenseTensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file(path));
}

inline void write_mask(const std::filesystem::path& path, const MaskTensor& m) {
  write_file_atomic(path, encode_mask(m));
}

inline MaskTensor read_mask(const std::filesystem::path& path) {
  return decode_mask(read_file(path));
}

}  // namespace fen
