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

#include <set>

#include "test_util.hpp"
#include "trus/digest.hpp"
#include "trus/metrics.hpp"
#include "trus/phantom.hpp"

namespace trus::phantom {
namespace {

using testing::TempDir;

double masked_mean(const videodata::Video& v, const videodata::Mask& m, bool inside) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if ((m[i] != 0) == inside) {
      sum += v[i];
      ++n;
    }
  }
  return sum / static_cast<double>(n);
}

TEST(SampleSeed, Deterministic) {
  EXPECT_EQ(derive_sample_seed(123, 45), derive_sample_seed(123, 45));
  static_assert(derive_sample_seed(1, 0) != derive_sample_seed(1, 1));
}

TEST(SampleSeed, CollisionScanOverIndicesAndMasters) {
  Rng rng(77);
  for (int i = 0; i < 10000; ++i) {
    const std::uint64_t s = rng.next();
    const std::uint64_t s2 = s ^ (1ULL << rng.below(64));
    EXPECT_NE(derive_sample_seed(s, 0), derive_sample_seed(s, 1));
    EXPECT_NE(derive_sample_seed(s, 5), derive_sample_seed(s2, 5));
  }
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 100000; ++i) seen.insert(derive_sample_seed(2024, i));
  EXPECT_EQ(seen.size(), 100000u);
}

TEST(Phantom, NegativeWithoutDistractorsHasEmptyMask) {
  PhantomConfig c;
  c.distractor_rate = 0.0;
  const GeneratedSample g = generate_sample(c, 5, 0);
  EXPECT_TRUE(g.lesions.empty());
  for (auto v : *g.sample.lesion_mask) EXPECT_EQ(v, 0);
}

TEST(Phantom, BitIdenticalForSameSeed) {
  PhantomConfig c;
  for (int label : {0, 1}) {
    const GeneratedSample a = generate_sample(c, 99, label);
    const GeneratedSample b = generate_sample(c, 99, label);
    EXPECT_EQ(a.sample.bmode, b.sample.bmode);
    EXPECT_EQ(a.sample.swe, b.sample.swe);
    EXPECT_EQ(*a.sample.lesion_mask, *b.sample.lesion_mask);
  }
}

TEST(Phantom, LesionContrastMatchesSettings) {
  PhantomConfig c;
  c.bmode_contrast = 0.4;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const GeneratedSample g = generate_sample(c, seed, 1);
    const auto& m = *g.sample.lesion_mask;
    EXPECT_LE(masked_mean(g.sample.bmode, m, true), 0.75 * masked_mean(g.sample.bmode, m, false));
    EXPECT_GE(masked_mean(g.sample.swe, m, true), 1.25 * masked_mean(g.sample.swe, m, false));
  }
}

TEST(Phantom, ValuesInUnitRangeAndMaskIffPositive) {
  PhantomConfig c;
  c.distractor_rate = 1.0;
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const int label = static_cast<int>(seed % 2);
    const GeneratedSample g = generate_sample(c, seed, label);
    for (float v : g.sample.bmode) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    for (float v : g.sample.swe) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
    const auto& m = *g.sample.lesion_mask;
    const bool any = std::any_of(m.begin(), m.end(), [](auto v) { return v != 0; });
    EXPECT_EQ(any, label == 1);
  }
}

TEST(Phantom, LesionsInsideVolumeAndLongEnough) {
  PhantomConfig c;
  c.distractor_rate = 1.0;
  const auto [T, H, W, C] = c.dims;
  const std::array<double, 3> dims{double(T), double(H), double(W)};
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const GeneratedSample g = generate_sample(c, seed, static_cast<int>(seed % 2));
    for (const LesionSpec& l : g.lesions) {
      for (int a = 0; a < 3; ++a) {
        EXPECT_GE(l.center[a] - l.radii[a], 0.0);
        EXPECT_LE(l.center[a] + l.radii[a], dims[a] - 1);
      }
      EXPECT_GE(2 * l.radii[0], 0.5 * T - 1);
    }
    if (seed % 2 == 1) {
      std::size_t frames = 0;
      const auto& m = *g.sample.lesion_mask;
      for (std::size_t t = 0; t < T; ++t) {
        bool any = false;
        for (std::size_t i = 0; i < H * W; ++i) any = any || m[t * H * W + i];
        frames += any;
      }
      EXPECT_GE(frames, T / 2);
    }
  }
}

TEST(Phantom, TaperEndpoints) {
  LesionSpec l{{8, 16, 16}, {4, 5, 5}, LesionKind::true_lesion};
  EXPECT_DOUBLE_EQ(lesion_taper(l, 8, 16, 16), 1.0);
  EXPECT_DOUBLE_EQ(lesion_taper(l, 8, 16, 22.5), 0.0);
  EXPECT_NEAR(lesion_taper(l, 8, 16, 21), 0.5, 1e-12);  // on the surface
}

TEST(Phantom, ConfigValidation) {
  PhantomConfig c;
  c.dims = {3, 32, 32, 1};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lesion_radius_range = {0.4, 0.6};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.distractor_rate = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(generate_sample(PhantomConfig{}, 0, 2), std::invalid_argument);
}

TEST(Phantom, PositiveCountRounding) {
  PhantomConfig c;
  c.n_samples = 10;
  c.positive_fraction = 0.5;
  EXPECT_EQ(positive_count(c), 5u);
  c.n_samples = 200;
  c.positive_fraction = 271.0 / 400.0;
  EXPECT_EQ(positive_count(c), 136u);
}

TEST(Phantom, DatasetCountsAndByteIdenticalRegeneration) {
  TempDir a("gen_a"), b("gen_b");
  PhantomConfig c;
  c.n_samples = 10;
  c.dims = {4, 16, 16, 1};
  c.lesion_radius_range = {0.12, 0.15};
  const auto m = generate_dataset(c, a.path());
  generate_dataset(c, b.path());
  EXPECT_EQ(m.entries.size(), 10u);
  EXPECT_EQ(m.count(1), 5u);
  for (const auto& e : m.entries) {
    EXPECT_EQ(digest_file(a.path() / e.bmode_path), digest_file(b.path() / e.bmode_path));
    EXPECT_EQ(digest_file(a.path() / e.swe_path), digest_file(b.path() / e.swe_path));
    EXPECT_EQ(digest_file(a.path() / *e.mask_path), digest_file(b.path() / *e.mask_path));
  }
  EXPECT_EQ(digest_file(a / "manifest.json"), digest_file(b / "manifest.json"));
}

// Single modalities cannot tell the classes apart at distractor_rate 1; the
// conjunction (SWE intensity inside the B-mode-dark blob) can.
TEST(Phantom, LabelNeedsBothModalities) {
  PhantomConfig c;
  c.distractor_rate = 1.0;
  std::vector<double> b_mean, e_mean, conj;
  std::vector<int> labels;
  for (std::uint64_t i = 0; i < 120; ++i) {
    const int label = static_cast<int>(i % 2);
    const GeneratedSample g = generate_sample(c, derive_sample_seed(5, i), label);
    const auto& s = g.sample;
    b_mean.push_back(-std::accumulate(s.bmode.begin(), s.bmode.end(), 0.0) / s.bmode.size());
    e_mean.push_back(std::accumulate(s.swe.begin(), s.swe.end(), 0.0) / s.swe.size());
    const auto dark = std::find_if(g.lesions.begin(), g.lesions.end(), [](const LesionSpec& l) {
      return l.darkens_bmode();
    });
    const auto [T, H, W, C] = c.dims;
    double inside = 0;
    std::size_t n = 0;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
          if (lesion_taper(*dark, double(t), double(h), double(w)) >= 1.0) {
            inside += s.swe[((t * H + h) * W + w) * C];
            ++n;
          }
        }
      }
    }
    conj.push_back(inside / static_cast<double>(n));
    labels.push_back(label);
  }
  // Ceilings measured on this seed set and frozen as regression bounds.
  EXPECT_LT(metrics::auc(b_mean, labels), 0.75);
  EXPECT_LT(metrics::auc(e_mean, labels), 0.75);
  EXPECT_GT(metrics::auc(conj, labels), 0.99);
}

}  // namespace
}  // namespace trus::phantom
