#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "crsync/core.hpp"

using namespace crsync;

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7), c(8);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    differs |= x != c();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, KnownFirstOutputs) {
  // Pinned so a change to seeding or the generator is noticed.
  Rng r(0);
  const auto first = r();
  Rng again(0);
  EXPECT_EQ(first, again());
  EXPECT_EQ(splitmix64(0), 0xE220A8397B1DCDAFULL);
}

TEST(Rng, UniformRangeAndMoments) {
  Rng r(3);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.02);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(11);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 70000; ++i) {
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    ++hits[k];
  }
  for (int h : hits) EXPECT_NEAR(h, 10000, 500);
}

TEST(Shuffle, IsAPermutationAndDeterministic) {
  std::vector<int> v(50), w;
  std::iota(v.begin(), v.end(), 0);
  w = v;
  Rng a(5), b(5);
  shuffle(v, a);
  shuffle(w, b);
  EXPECT_EQ(v, w);
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
}

TEST(Text, FormatParseRoundTrip) {
  Rng r(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = (r.uniform() - 0.5) * std::pow(10.0, static_cast<double>(r.below(40)) - 20.0);
    EXPECT_EQ(parse_double(format_double(v)), v);
  }
  EXPECT_TRUE(std::isnan(parse_double(format_double(std::nan("")))));
  EXPECT_THROW(parse_double("1.5x"), DataError);
  EXPECT_THROW(parse_double(""), DataError);
}

TEST(Text, SplitAndTrim) {
  EXPECT_EQ(split("a,,b", ','), (std::vector<std::string>{"a", "", "b"}));
  EXPECT_EQ(split("", ','), (std::vector<std::string>{""}));
  EXPECT_EQ(trim("  x y \r\n"), "x y");
  EXPECT_EQ(trim("   "), "");
}

TEST(Stats, MeanAndPopulationStd) {
  const std::vector<double> v{1, 2, 3};
  EXPECT_DOUBLE_EQ(mean(v), 2.0);
  EXPECT_NEAR(population_std(v), std::sqrt(2.0 / 3.0), 1e-15);
}
