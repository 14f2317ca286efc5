#pragma once

// Seeded random streams. Every draw is derived from std::mt19937_64, whose
// output sequence is fixed by the C++ standard, so results are reproducible
// across compilers and machines. Distributions are implemented here for the
// same reason: std::*_distribution output is implementation-defined.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "fractex/sparse.hpp"

namespace fractex {

/// SplitMix64 finalizer (Steele, Lea & Flood). Bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Domain tags keep streams for different purposes apart under one seed.
enum class StreamPurpose : std::uint64_t {
  expansion_block = 0x426c6f636b000001ULL,
  svd_test_matrix = 0x5376645465737402ULL,
  sketch_sampling = 0x536b657463680003ULL,
};

/// Stream seed for (purpose, master_seed, i, j):
///   s = mix64(purpose ^ mix64(master_seed))
///   s = mix64(s ^ mix64(i))
///   s = mix64(s ^ mix64(~j))
/// Chaining makes the mapping order-sensitive, so (i,j) and (j,i) differ.
/// This function is part of the output contract; changing it changes every
/// expansion produced for a given seed.
constexpr std::uint64_t derive_stream_seed(StreamPurpose purpose, std::uint64_t master_seed,
                                           std::uint64_t i, std::uint64_t j) noexcept {
  std::uint64_t s = mix64(static_cast<std::uint64_t>(purpose) ^ mix64(master_seed));
  s = mix64(s ^ mix64(i));
  s = mix64(s ^ mix64(~j));
  return s;
}

class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t bounded(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = engine_();
      if (r >= threshold) return r % bound;
    }
  }

  bool bernoulli(double p) { return uniform01() < p; }

  /// Standard normal via Box-Muller; the paired variate is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  /// Uniform permutation of 0..n-1 by Fisher-Yates, drawing from the top.
  std::vector<Index> permutation(Index n) {
    std::vector<Index> perm(n);
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index k = n; k > 1; --k) {
      const Index pick = bounded(k);
      std::swap(perm[k - 1], perm[pick]);
    }
    return perm;
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// The random stream owned by one expansion block. Within a block, draws are
/// consumed in a fixed order: dropout (one per base non-zero, row-major),
/// then the row permutation, then the column permutation.
struct BlockRandomStream {
  std::uint64_t master_seed = 0;
  Index block_row = 0;
  Index block_col = 0;
  RandomStream stream;
};

inline BlockRandomStream derive_block_stream(std::uint64_t master_seed, Index i, Index j) {
  return BlockRandomStream{
      master_seed, i, j,
      RandomStream(derive_stream_seed(StreamPurpose::expansion_block, master_seed, i, j))};
}

}  // namespace fractex
