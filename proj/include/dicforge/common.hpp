#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dicforge {

/// Raised when an input file is missing, unreadable, or structurally broken.
struct io_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised when arguments or data violate a documented precondition.
struct validation_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// SplitMix64 output function. Used both as a standalone 64-bit mixer and,
// via splitmix_at, as the per-index seed schedule for parallel generation.
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// i-th output of the SplitMix64 stream seeded with `seed`.
inline uint64_t splitmix_at(uint64_t seed, uint64_t i) {
  return splitmix64(seed + i * 0x9E3779B97F4A7C15ULL);
}

/// Deterministic uniform sampling on top of std::mt19937_64.
/// The standard distributions are implementation-defined, so the mapping
/// from raw engine output to values is done here, bit-for-bit portable.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  uint64_t uniform_int(uint64_t lo, uint64_t hi) {
    return lo + next_below(hi - lo + 1);
  }

  /// Bernoulli with success probability p.
  bool bernoulli(double p) { return uniform() < p; }

 private:
  // Unbiased via rejection (Lemire-style threshold on the modulus).
  uint64_t next_below(uint64_t n) {
    if (n == 0) return engine_();
    const uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  std::mt19937_64 engine_;
};

// FNV-1a 64-bit, used for payload checksums in the DFLD format and for
// whole-file checksums in dataset manifests.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 0xCBF29CE484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Dense row-major H x W grid of T. Row index first: at(y, x).
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(int h, int w, T fill = T{}) : h_(h), w_(w), data_(size_t(h) * w, fill) {}

  int height() const { return h_; }
  int width() const { return w_; }
  size_t size() const { return data_.size(); }

  T& at(int y, int x) { return data_[size_t(y) * w_ + x]; }
  const T& at(int y, int x) const { return data_[size_t(y) * w_ + x]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  bool operator==(const Grid&) const = default;

 private:
  int h_ = 0;
  int w_ = 0;
  std::vector<T> data_;
};

/// Grayscale intensity image, values in [0, 1].
using Image = Grid<float>;

}  // namespace dicforge
