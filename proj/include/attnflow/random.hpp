#pragma once

// Seedable RNG with a fixed cross-platform algorithm.
//
// The engine is std::mt19937_64, whose output sequence is pinned by the C++
// standard. The standard *distributions* are implementation-defined, so the
// uniform and normal transforms below are written out explicitly. Named
// sub-streams ("data", "init", "probes", ...) are derived from the master seed
// with a SplitMix64 finaliser over the seed and an FNV-1a hash of the name.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string_view>

#include "attnflow/matrix.hpp"

namespace attnflow {

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream for `purpose`, fully determined by (seed, purpose).
  static Rng substream(std::uint64_t master_seed, std::string_view purpose) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a offset basis
    for (unsigned char ch : purpose) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    return Rng(splitmix64(master_seed ^ splitmix64(h)));
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [lo, hi].
  std::size_t uniform_index(std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(uniform() * static_cast<double>(hi - lo + 1));
  }

  /// Standard normal via Box-Muller; both variates of a pair are used.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  Matrix normal_matrix(std::size_t rows, std::size_t cols, double scale = 1.0) {
    return Matrix::generate(rows, cols, [&](std::size_t, std::size_t) { return scale * normal(); });
  }

 private:
  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace attnflow
