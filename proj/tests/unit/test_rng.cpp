#include "rmfg/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

namespace rmfg {
namespace {

// Known-answer vectors from the Random123 distribution (kat_vectors).
TEST(PhiloxTest, KnownAnswerZero) {
  const auto out = Philox4x32::generate({0, 0, 0, 0}, {0, 0});
  EXPECT_EQ(out[0], 0x6627e8d5u);
  EXPECT_EQ(out[1], 0xe169c58du);
  EXPECT_EQ(out[2], 0xbc57ac4cu);
  EXPECT_EQ(out[3], 0x9b00dbd8u);
}

TEST(PhiloxTest, KnownAnswerOnes) {
  const auto out = Philox4x32::generate(
      {0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
      {0xffffffffu, 0xffffffffu});
  EXPECT_EQ(out[0], 0x408f276du);
  EXPECT_EQ(out[1], 0x41c83b0eu);
  EXPECT_EQ(out[2], 0xa20bc7c6u);
  EXPECT_EQ(out[3], 0x6d5451fdu);
}

TEST(RandomStreamTest, SameAddressSameDraws) {
  RandomStream a(42, StreamModule::kIdiosyncratic, 7, 3);
  RandomStream b(42, StreamModule::kIdiosyncratic, 7, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.normal(), b.normal());
}

TEST(RandomStreamTest, DifferentAddressesDiffer) {
  std::set<double> first;
  for (std::uint64_t e = 0; e < 50; ++e) {
    RandomStream s(1, StreamModule::kInitial, e);
    first.insert(s.uniform());
  }
  RandomStream other_module(1, StreamModule::kAction, 0);
  first.insert(other_module.uniform());
  EXPECT_EQ(first.size(), 51u);
}

TEST(RandomStreamTest, UniformIsOpenAndNormalMomentsAreRight) {
  RandomStream s(5, StreamModule::kTest, 0);
  const int n = 200000;
  double m1 = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    const double u = s.uniform();
    ASSERT_GT(u, 0.0);
    ASSERT_LT(u, 1.0);
    const double z = s.normal();
    m1 += z;
    m2 += z * z;
  }
  m1 /= n;
  m2 /= n;
  EXPECT_NEAR(m1, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(m2, 1.0, 5.0 * std::sqrt(2.0 / n));
}

TEST(RandomStreamTest, BelowStaysInRange) {
  RandomStream s(9, StreamModule::kPermutation, 1);
  std::vector<int> hits(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const auto v = s.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_GT(h, 800);
}

}  // namespace
}  // namespace rmfg
