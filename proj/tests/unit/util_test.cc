// Copyright 2026 The servefuzz Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <map>
#include <vector>

#include <gtest/gtest.h>

#include "servefuzz/util/hash.h"
#include "servefuzz/util/rng.h"

namespace servefuzz {
namespace {

TEST(HashTest, Mix64KnownValues) {
  // First two outputs of the reference SplitMix64 generator seeded with 0.
  EXPECT_EQ(Mix64(0), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(Mix64(0x9e3779b97f4a7c15ULL), 0x6e789e6aa1b965f4ULL);
}

TEST(HashTest, HashStringDistinguishesAndIsConstexpr) {
  static_assert(HashString("a") != HashString("b"));
  EXPECT_NE(HashString(""), HashString(std::string_view("\0", 1)));
  EXPECT_NE(HashCombine(1, 2), HashCombine(2, 1));
}

TEST(HashTest, HexDigestIsFixedWidth) {
  EXPECT_EQ(HexDigest(0), "0000000000000000");
  EXPECT_EQ(HexDigest(0xabcULL), "0000000000000abc");
  EXPECT_EQ(HexDigest(~0ULL), "ffffffffffffffff");
}

TEST(RngTest, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(a.UniformInt(-5, 5), b.UniformInt(-5, 5));
}

TEST(RngTest, UniformIntStaysInRangeAndCoversIt) {
  Rng rng(7);
  std::map<int64_t, int> seen;
  for (int i = 0; i < 5000; ++i) {
    const int64_t v = rng.UniformInt(-3, 3);
    ASSERT_GE(v, -3);
    ASSERT_LE(v, 3);
    ++seen[v];
  }
  EXPECT_EQ(seen.size(), 7u);
  EXPECT_EQ(rng.UniformInt(9, 9), 9);
}

TEST(RngTest, UniformRealHalfOpen) {
  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double x = rng.UniformReal();
    ASSERT_GE(x, 0.0);
    ASSERT_LT(x, 1.0);
  }
}

TEST(RngTest, WeightedIndexFollowsWeights) {
  Rng rng(11);
  std::vector<int> hits(3);
  for (int i = 0; i < 30000; ++i) ++hits[rng.WeightedIndex({1.0, 0.0, 3.0})];
  EXPECT_EQ(hits[1], 0);
  EXPECT_NEAR(hits[2] / 30000.0, 0.75, 0.02);
}

TEST(RngTest, WeightedIndexAllZeroIsUniform) {
  Rng rng(5);
  std::vector<int> hits(4);
  for (int i = 0; i < 8000; ++i) ++hits[rng.WeightedIndex({0, 0, 0, 0})];
  for (int h : hits) EXPECT_GT(h, 1500);
}

}  // namespace
}  // namespace servefuzz
