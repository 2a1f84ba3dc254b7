#include "sdecal/rng.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include <gtest/gtest.h>

using namespace sdecal;

TEST(FastMath, LogMatchesStd) {
  std::mt19937_64 gen(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200000; ++i) {
    const double x = std::max(u(gen), 1e-300);
    const double ref = std::log(x);
    EXPECT_NEAR(detail::fast_log(x), ref, std::abs(ref) * 1e-12 + 1e-13);
  }
  EXPECT_EQ(detail::fast_log(1.0), 0.0);
  EXPECT_NEAR(detail::fast_log(0x1.0p-53), -53 * std::numbers::ln2, 1e-11);
}

TEST(FastMath, SinCosMatchesStd) {
  std::mt19937_64 gen(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 200000; ++i) {
    const double x = u(gen);
    double s, c;
    detail::fast_sincos2pi(x, &s, &c);
    EXPECT_NEAR(s, std::sin(2.0 * std::numbers::pi * x), 1e-12);
    EXPECT_NEAR(c, std::cos(2.0 * std::numbers::pi * x), 1e-12);
  }
}

TEST(Philox, DeterministicAndKeySensitive) {
  const auto a = detail::philox2x64(42, 7, 1000);
  const auto b = detail::philox2x64(42, 7, 1000);
  EXPECT_EQ(a.a, b.a);
  EXPECT_EQ(a.b, b.b);
  const auto c = detail::philox2x64(43, 7, 1000);
  EXPECT_TRUE(a.a != c.a || a.b != c.b);
  const auto d = detail::philox2x64(42, 8, 1000);
  EXPECT_TRUE(a.a != d.a || a.b != d.b);
}

TEST(FillNormals, ChunkingInvariance) {
  std::vector<double> whole(1003);
  fill_normals(9, 4, 0, whole.size(), whole.data());
  // Same indices read in ragged pieces must give identical values.
  std::vector<double> pieces(1003);
  std::size_t at = 0;
  for (std::size_t len : {1ul, 2ul, 7ul, 500ul, 493ul}) {
    fill_normals(9, 4, at, len, pieces.data() + at);
    at += len;
  }
  ASSERT_EQ(at, whole.size());
  for (std::size_t i = 0; i < whole.size(); ++i) EXPECT_EQ(whole[i], pieces[i]) << i;
}

TEST(FillNormals, OffsetAddressing) {
  std::vector<double> a(64), b(32);
  fill_normals(1, 2, 0, 64, a.data());
  fill_normals(1, 2, 17, 32, b.data());
  for (int i = 0; i < 32; ++i) EXPECT_EQ(b[i], a[17 + i]);
}

TEST(NormalSource, MatchesFillNormals) {
  NormalSource src(5, 6);
  std::vector<double> ref(5000);
  fill_normals(5, 6, 0, ref.size(), ref.data());
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_EQ(src(), ref[i]) << i;
}

TEST(Normals, MomentsAndTails) {
  const std::size_t n = 4000000;
  std::vector<double> z(n);
  fill_normals(123, 0, 0, n, z.data());
  double mean = 0, m2 = 0, m3 = 0, m4 = 0;
  for (double v : z) mean += v;
  mean /= static_cast<double>(n);
  for (double v : z) {
    const double c = v - mean;
    m2 += c * c;
    m3 += c * c * c;
    m4 += c * c * c * c;
  }
  m2 /= static_cast<double>(n);
  m3 /= static_cast<double>(n);
  m4 /= static_cast<double>(n);
  const double se_mean = 1.0 / std::sqrt(static_cast<double>(n));
  EXPECT_NEAR(mean, 0.0, 5 * se_mean);
  EXPECT_NEAR(m2, 1.0, 5 * std::sqrt(2.0) * se_mean);
  EXPECT_NEAR(m3 / std::pow(m2, 1.5), 0.0, 5 * std::sqrt(6.0) * se_mean);
  EXPECT_NEAR(m4 / (m2 * m2), 3.0, 5 * std::sqrt(24.0) * se_mean);
  // Tail frequency beyond 3 sigma: p = 2*(1-Phi(3)) ~ 0.0026998.
  std::size_t tail = 0;
  for (double v : z) tail += std::abs(v) > 3.0;
  const double p = 0.0026997960632602;
  const double se_p = std::sqrt(p * (1 - p) / static_cast<double>(n));
  EXPECT_NEAR(static_cast<double>(tail) / static_cast<double>(n), p, 5 * se_p);
}

TEST(Normals, StreamsAreDistinct) {
  std::vector<double> a(1000), b(1000);
  fill_normals(77, 0, 0, a.size(), a.data());
  fill_normals(77, 1, 0, b.size(), b.data());
  int equal = 0;
  for (std::size_t i = 0; i < a.size(); ++i) equal += a[i] == b[i];
  EXPECT_LT(equal, 3);
  double corr = 0;
  for (std::size_t i = 0; i < a.size(); ++i) corr += a[i] * b[i];
  corr /= static_cast<double>(a.size());
  EXPECT_NEAR(corr, 0.0, 5.0 / std::sqrt(static_cast<double>(a.size())));
}

TEST(MakeStream, PacksIndices) {
  EXPECT_EQ(make_stream(0, 0), 0ull);
  EXPECT_EQ(make_stream(1, 2), (1ull << 32) | 2ull);
  EXPECT_NE(make_stream(2, 1), make_stream(1, 2));
}
