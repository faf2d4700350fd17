#pragma once

#include <cstdint>

namespace fen {

//! splitmix64 finalizer: bijective avalanche mix of a 64-bit word.
inline std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

//! Deterministic child seed for stream `stream` of a root seed. All
//! randomness in an experiment flows from one root through this function,
//! so replications and cells are reproducible independently of execution
//! order: seed_rep = derive_seed(derive_seed(root, cell), rep), and each
//! draw purpose (core, factor, noise, mask) gets its own stream below that.
inline std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(root + splitmix64(stream));
}

}  // namespace fen
