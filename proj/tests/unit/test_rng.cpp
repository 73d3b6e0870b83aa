#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "mssm/rng.hpp"

using mssm::Rng;

// Known-answer vectors from the Random123 distribution (kat_vectors).
TEST(Philox, KnownAnswerZero) {
  const auto out = mssm::philox4x32_10({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(Philox, KnownAnswerOnes) {
  const auto out = mssm::philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(Philox, KnownAnswerPi) {
  const auto out = mssm::philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u});
  EXPECT_EQ(out[0], 0xd16cfe09u);
  EXPECT_EQ(out[1], 0x94fdccebu);
  EXPECT_EQ(out[2], 0x5001e420u);
  EXPECT_EQ(out[3], 0x24126ea1u);
}

TEST(Rng, SplitmixAndFnvReferenceValues) {
  EXPECT_EQ(Rng::splitmix64(0), 0xe220a8397b1dcdafull);
  EXPECT_EQ(Rng::fnv1a64(""), 0xcbf29ce484222325ull);
  EXPECT_EQ(Rng::fnv1a64("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Rng, StreamIsPhiloxOfBlockIndex) {
  Rng r = Rng::from_key(0x0123456789abcdefull);
  for (std::uint32_t block = 0; block < 3; ++block) {
    const auto ref = mssm::philox4x32_10({block, 0, 0, 0}, {0x89abcdefu, 0x01234567u});
    for (int w = 0; w < 4; ++w) EXPECT_EQ(r.next_u32(), ref[static_cast<std::size_t>(w)]);
  }
}

TEST(Rng, SameSeedSameSequence) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs = differs || x != c.next_u64();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, SubstreamIgnoresParentPosition) {
  Rng a(7), b(7);
  for (int i = 0; i < 13; ++i) b.next_u32();
  Rng sa = a.substream("train"), sb = b.substream("train");
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sa.next_u64(), sb.next_u64());
  EXPECT_EQ(a.substream(5).key(), b.substream(5).key());
  EXPECT_NE(a.substream(5).key(), a.substream(6).key());
  EXPECT_NE(a.substream("x").key(), a.substream("y").key());
}

TEST(Rng, SubstreamKeyDerivation) {
  const Rng r(3);
  EXPECT_EQ(r.substream("eval").key(), Rng::splitmix64(r.key() ^ Rng::fnv1a64("eval")));
  EXPECT_EQ(r.substream(std::uint64_t{9}).key(), Rng::splitmix64(r.key() ^ Rng::splitmix64(9)));
}

TEST(Rng, UniformMoments) {
  Rng r(1);
  const int n = 200000;
  double sum = 0, sq = 0, lo = 1, hi = 0;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sq += u * u;
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sq / n - 0.25, 1.0 / 12.0, 0.002);
  EXPECT_LT(lo, 1e-3);
  EXPECT_GT(hi, 1 - 1e-3);
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  const int n = 200000;
  double sum = 0, sq = 0, quart = 0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    ASSERT_TRUE(std::isfinite(z));
    sum += z;
    sq += z * z;
    quart += z * z * z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.015);
  EXPECT_NEAR(quart / n, 3.0, 0.08);
}

TEST(Rng, BelowIsUniform) {
  Rng r(3);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++counts[v];
  }
  // Chi-square with 6 degrees of freedom; 22.46 is the 0.999 quantile.
  double chi2 = 0;
  for (int c : counts) chi2 += (c - n / 7.0) * (c - n / 7.0) / (n / 7.0);
  EXPECT_LT(chi2, 22.46);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(Rng, SampleWithoutReplacement) {
  Rng r(4);
  const auto s = r.sample_without_replacement(10, 10);
  EXPECT_EQ(std::set<int>(s.begin(), s.end()).size(), 10u);
  const auto t = r.sample_without_replacement(1000, 5);
  EXPECT_EQ(std::set<int>(t.begin(), t.end()).size(), 5u);
  for (int v : t) {
    EXPECT_GE(v, 0);
    EXPECT_LT(v, 1000);
  }
}
