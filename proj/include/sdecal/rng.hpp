#pragma once

// Counter-based random number generation for reproducible parallel Monte
// Carlo. Every normal variate is addressed by (key, stream, index): the same
// triple always yields the same value, independent of thread scheduling or
// how the consuming simulation is chunked.
//
// Construction: a Philox-style 2x64 bijection (10 rounds) maps
// (stream, block) -> 128 uniform bits under `key`; each block feeds one
// Box-Muller pair. log and sin/cos are evaluated with local polynomial
// kernels so that streams are reproducible across libm versions.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>

namespace sdecal {

namespace detail {

struct U64Pair {
  std::uint64_t a, b;
};

inline U64Pair philox2x64(std::uint64_t key, std::uint64_t ctr_hi, std::uint64_t ctr_lo) {
  constexpr std::uint64_t kMul = 0xD2B74407B1CE6E93ULL;
  constexpr std::uint64_t kWeyl = 0x9E3779B97F4A7C15ULL;
  std::uint64_t x0 = ctr_hi, x1 = ctr_lo, k = key;
  for (int r = 0; r < 10; ++r) {
    const auto prod = static_cast<__uint128_t>(kMul) * x0;
    const auto hi = static_cast<std::uint64_t>(prod >> 64);
    const auto lo = static_cast<std::uint64_t>(prod);
    x0 = hi ^ k ^ x1;
    x1 = lo;
    k += kWeyl;
  }
  return {x0, x1};
}

// (0,1]: never zero, safe under log.
inline double to_unit_oc(std::uint64_t w) {
  return static_cast<double>((w >> 11) + 1) * 0x1.0p-53;
}

// [0,1): valid angle fraction.
inline double to_unit_co(std::uint64_t w) {
  return static_cast<double>(w >> 11) * 0x1.0p-53;
}

// log(u) for u in (0,1], exponent/mantissa split plus atanh series.
inline double fast_log(double u) {
  const auto bits = std::bit_cast<std::uint64_t>(u);
  int e = static_cast<int>((bits >> 52) & 0x7FF) - 1023;
  double m = std::bit_cast<double>((bits & 0x000FFFFFFFFFFFFFULL) | 0x3FF0000000000000ULL);
  if (m > 1.41421356237309504880) {
    m *= 0.5;
    e += 1;
  }
  const double s = (m - 1.0) / (m + 1.0);
  const double s2 = s * s;
  const double poly =
      s2 * (1.0 / 3 +
            s2 * (1.0 / 5 +
                  s2 * (1.0 / 7 +
                        s2 * (1.0 / 9 + s2 * (1.0 / 11 + s2 * (1.0 / 13 + s2 * (1.0 / 15)))))));
  return 2.0 * s * (1.0 + poly) + static_cast<double>(e) * 0.69314718055994530942;
}

// sin(2*pi*u), cos(2*pi*u) for u in [0,1), by octant reduction.
inline void fast_sincos2pi(double u, double* sp, double* cp) {
  static constexpr double kS[8] = {0.0,  0.70710678118654752440,  1.0,  0.70710678118654752440,
                                   0.0,  -0.70710678118654752440, -1.0, -0.70710678118654752440};
  static constexpr double kC[8] = {1.0,  0.70710678118654752440,  0.0,  -0.70710678118654752440,
                                   -1.0, -0.70710678118654752440, 0.0,  0.70710678118654752440};
  const double t = u * 8.0;
  const int q = static_cast<int>(t);
  const double th = (t - q) * 0.78539816339744830962;  // [0, pi/4)
  const double x2 = th * th;
  const double s0 =
      th * (1.0 + x2 * (-1.0 / 6 +
                        x2 * (1.0 / 120 +
                              x2 * (-1.0 / 5040 +
                                    x2 * (1.0 / 362880 +
                                          x2 * (-1.0 / 39916800 + x2 * (1.0 / 6227020800.0)))))));
  const double c0 =
      1.0 + x2 * (-0.5 + x2 * (1.0 / 24 +
                               x2 * (-1.0 / 720 +
                                     x2 * (1.0 / 40320 +
                                           x2 * (-1.0 / 3628800 + x2 * (1.0 / 479001600.0))))));
  *sp = kS[q] * c0 + kC[q] * s0;
  *cp = kC[q] * c0 - kS[q] * s0;
}

}  // namespace detail

/// Fill out[0..n) with standard normals number [first, first+n) of the
/// stream (key, stream). Normal 2k and 2k+1 form the Box-Muller pair of
/// counter block k, so any aligned chunking yields identical values.
inline void fill_normals(std::uint64_t key, std::uint64_t stream, std::uint64_t first,
                         std::size_t n, double* out) {
  if (n == 0) return;
  constexpr std::size_t kChunk = 2048;  // blocks per pass
  double u1[kChunk], u2[kChunk], r[kChunk], s[kChunk], c[kChunk];

  std::uint64_t idx = first;
  std::size_t produced = 0;
  while (produced < n) {
    const std::uint64_t block0 = idx / 2;
    const std::uint64_t lastidx = first + n - 1;
    const std::uint64_t block1 = lastidx / 2;
    const std::size_t nblocks =
        std::min<std::uint64_t>(kChunk, block1 - block0 + 1);
    for (std::size_t i = 0; i < nblocks; ++i) {
      const detail::U64Pair w = detail::philox2x64(key, stream, block0 + i);
      u1[i] = detail::to_unit_oc(w.a);
      u2[i] = detail::to_unit_co(w.b);
    }
    for (std::size_t i = 0; i < nblocks; ++i)
      r[i] = std::sqrt(-2.0 * detail::fast_log(u1[i]));
    for (std::size_t i = 0; i < nblocks; ++i) detail::fast_sincos2pi(u2[i], &s[i], &c[i]);
    for (std::size_t i = 0; i < nblocks; ++i) {
      const std::uint64_t even = 2 * (block0 + i);
      const double z0 = r[i] * c[i];
      const double z1 = r[i] * s[i];
      if (even >= idx && produced < n) {
        out[produced++] = z0;
        ++idx;
      }
      if (even + 1 >= idx && produced < n) {
        out[produced++] = z1;
        ++idx;
      }
    }
  }
}

/// Single addressed normal (used by tests; sequential consumers should
/// prefer NormalSource or fill_normals).
inline double normal_at(std::uint64_t key, std::uint64_t stream, std::uint64_t index) {
  double z;
  fill_normals(key, stream, index, 1, &z);
  return z;
}

/// Buffered sequential reader of one normal stream.
class NormalSource {
 public:
  NormalSource(std::uint64_t key, std::uint64_t stream, std::uint64_t first = 0)
      : key_(key), stream_(stream), next_(first) {}

  double operator()() {
    if (pos_ == have_) refill();
    return buf_[pos_++];
  }

  /// Index of the next normal to be produced.
  std::uint64_t cursor() const { return next_ - (have_ - pos_); }

 private:
  void refill() {
    fill_normals(key_, stream_, next_, kBuf, buf_);
    next_ += kBuf;
    have_ = kBuf;
    pos_ = 0;
  }

  static constexpr std::size_t kBuf = 4096;
  std::uint64_t key_, stream_, next_;
  std::size_t pos_ = 0, have_ = 0;
  double buf_[kBuf];
};

/// Derives a replication-level stream id from grid and replication indices.
inline std::uint64_t make_stream(std::uint32_t grid_index, std::uint32_t replication) {
  return (static_cast<std::uint64_t>(grid_index) << 32) | replication;
}

}  // namespace sdecal
