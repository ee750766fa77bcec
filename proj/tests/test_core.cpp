// Copyright 2026 The TrusFusion Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "trus/digest.hpp"
#include "trus/rng.hpp"
#include "trus/tensor.hpp"

namespace trus {
namespace {

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next();
    EXPECT_EQ(x, b.next());
    differs = differs || x != c.next();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformAndBelowRanges) {
  Rng r(1);
  std::vector<int> hist(7, 0);
  for (int i = 0; i < 7000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    const auto k = r.below(7);
    ASSERT_LT(k, 7u);
    ++hist[k];
  }
  for (int h : hist) EXPECT_NEAR(h, 1000, 150);
  EXPECT_EQ(r.below(1), 0u);
}

TEST(Rng, NormalMoments) {
  Rng r(2);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = r.normal();
    s += x;
    s2 += x * x;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Rng, ShuffleIsPermutation) {
  Rng r(3);
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  r.shuffle(std::span<int>(v));
  std::vector<int> sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(Rng, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t m = 0; m < 20; ++m) {
    for (std::uint64_t i = 0; i < 500; ++i) seen.insert(derive_sample_seed(m, i));
  }
  EXPECT_EQ(seen.size(), 20u * 500u);
  EXPECT_EQ(mix64(0), 0u);
}

TEST(Tensor, ShapeChecks) {
  Tensor<float> t({2, 3, 4}, 1.5f);
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t[23], 1.5f);
  t.reshape({6, 4});
  EXPECT_EQ(t.dim(0), 6u);
  EXPECT_THROW(t.reshape({5, 5}), std::invalid_argument);
  EXPECT_THROW((Tensor<float>({2, 2}, std::vector<float>(3))), std::invalid_argument);
  EXPECT_EQ(shape_string({2, 3}), "(2x3)");
}

TEST(Tensor, CastAndEquality) {
  Tensor<float> a({3}, std::vector<float>{1.5f, -2.0f, 0.25f});
  const Tensor<double> d = a.cast<double>();
  EXPECT_EQ(d[1], -2.0);
  EXPECT_EQ(d.cast<float>(), a);
  Tensor<float> b = a;
  b.reshape({1, 3});
  EXPECT_FALSE(a == b);
}

TEST(Digest, KnownFnv1aValues) {
  // Reference values of 64-bit FNV-1a.
  EXPECT_EQ(digest_text(""), "cbf29ce484222325");
  EXPECT_EQ(digest_text("a"), "af63dc4c8601ec8c");
  EXPECT_EQ(digest_text("foobar"), "85944171f73967e8");
}

}  // namespace
}  // namespace trus
