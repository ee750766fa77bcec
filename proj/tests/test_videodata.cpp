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

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "test_util.hpp"
#include "trus/error.hpp"
#include "trus/videodata.hpp"

namespace trus::videodata {
namespace {

using testing::random_tensor;
using testing::TempDir;

Video video_of(std::initializer_list<float> values, Shape shape) {
  Video v(std::move(shape));
  std::copy(values.begin(), values.end(), v.begin());
  return v;
}

TEST(Normalize, MinMaxOfThreeValues) {
  const Video out = normalize_intensities(video_of({10, 20, 30}, {3, 1, 1, 1}));
  EXPECT_FLOAT_EQ(out[0], 0.0f);
  EXPECT_FLOAT_EQ(out[1], 0.5f);
  EXPECT_FLOAT_EQ(out[2], 1.0f);
}

TEST(Normalize, AlreadyUnitRangeIsUnchanged) {
  const Video in = video_of({0, 0.25f, 1, 0.5f}, {1, 2, 2, 1});
  EXPECT_EQ(normalize_intensities(in), in);
}

TEST(Normalize, ConstantGivesZeros) {
  const Video out = normalize_intensities(Video({2, 3, 3, 1}, 7.5f));
  for (float v : out) EXPECT_EQ(v, 0.0f);
}

TEST(Normalize, NonFiniteNamesIndex) {
  Video v({2, 2, 2, 1}, 1.0f);
  v[5] = std::numeric_limits<float>::quiet_NaN();
  try {
    normalize_intensities(v);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("[1,0,1,0]"), std::string::npos) << e.what();
  }
}

TEST(Normalize, IdempotentOnRandomInput) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Shape shape{1 + rng.below(4), 1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(3)};
    const Video x = random_tensor<float>(shape, rng, -50, 80);
    const Video once = normalize_intensities(x);
    const Video twice = normalize_intensities(once);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_NEAR(once[i], twice[i], 1e-7);
      EXPECT_GE(once[i], 0.0f);
      EXPECT_LE(once[i], 1.0f);
    }
  }
}

TEST(Resize, IdentityWhenTargetMatches) {
  Rng rng(5);
  const Video x = random_tensor<float>({3, 4, 5, 2}, rng);
  const Video y = resize_video(x, {3, 4, 5});
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(x[i], y[i], 1e-6);
}

TEST(Resize, ConstantStaysConstant) {
  const Video y = resize_video(Video({2, 3, 3, 1}, 0.3f), {5, 7, 2});
  EXPECT_EQ(y.shape(), (Shape{5, 7, 2, 1}));
  for (float v : y) EXPECT_NEAR(v, 0.3f, 1e-6);
}

TEST(Resize, TwoPointProfileToThree) {
  const Video y = resize_video(video_of({0, 1}, {1, 1, 2, 1}), {1, 1, 3});
  EXPECT_NEAR(y[0], 0.0f, 1e-7);
  EXPECT_NEAR(y[1], 0.5f, 1e-7);
  EXPECT_NEAR(y[2], 1.0f, 1e-7);
}

TEST(Resize, ChannelsStayIndependent) {
  Video x({1, 1, 2, 2});
  x[0] = 0;
  x[1] = 10;
  x[2] = 1;
  x[3] = 20;
  const Video y = resize_video(x, {1, 1, 3});
  EXPECT_NEAR(y[2], 0.5f, 1e-6);
  EXPECT_NEAR(y[3], 15.0f, 1e-5);
}

TEST(Resize, ZeroSizeRejected) {
  EXPECT_THROW(resize_video(Video({0, 2, 2, 1}), {2, 2, 2}), std::invalid_argument);
  EXPECT_THROW(resize_video(Video({1, 2, 2, 1}), {0, 2, 2}), std::invalid_argument);
}

TEST(Resize, OutputStaysWithinInputBounds) {
  Rng rng(17);
  for (int trial = 0; trial < 40; ++trial) {
    const Video x = random_tensor<float>({1 + rng.below(4), 1 + rng.below(6), 1 + rng.below(6), 1}, rng, -3, 9);
    const std::array<std::size_t, 3> target{1 + rng.below(7), 1 + rng.below(9), 1 + rng.below(9)};
    const Video y = resize_video(x, target);
    const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
    for (float v : y) {
      EXPECT_GE(v, *lo - 1e-6);
      EXPECT_LE(v, *hi + 1e-6);
    }
  }
}

TEST(Container, HeaderSizeAndLayout) {
  Tensor<float> t({2, 3});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(i) + 0.5f;
  std::ostringstream out;
  encode_container(out, t);
  const std::string bytes = out.str();
  ASSERT_EQ(bytes.size(), kContainerHeaderBytes + 6 * 4);
  EXPECT_EQ(bytes.substr(0, 5), "TRUS1");
  EXPECT_EQ(bytes[5], 2);
  EXPECT_EQ(static_cast<unsigned char>(bytes[6]), 2u);   // dim0 low byte
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 3u);  // dim1 low byte
  EXPECT_EQ(static_cast<unsigned char>(bytes[14]), 1u);  // unused dims are 1
  EXPECT_EQ(bytes[22], 1);                               // f32 dtype code
  float first;
  std::memcpy(&first, bytes.data() + kContainerHeaderBytes, 4);
  EXPECT_EQ(first, 0.5f);
}

TEST(Container, RandomRoundTripsAreBitExact) {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    Shape shape(1 + rng.below(4));
    for (auto& d : shape) d = 1 + rng.below(5);
    Tensor<float> f(shape);
    for (float& v : f) {
      const auto bits = static_cast<std::uint32_t>(rng.next());
      std::memcpy(&v, &bits, 4);
      if (!std::isfinite(v)) v = 1.0f;
    }
    Tensor<std::uint8_t> u(shape);
    for (auto& v : u) v = static_cast<std::uint8_t>(rng.below(256));
    std::stringstream sf, su;
    encode_container(sf, f);
    encode_container(su, u);
    const Tensor<float> f2 = decode_f32(sf, "mem");
    const Tensor<std::uint8_t> u2 = decode_u8(su, "mem");
    ASSERT_EQ(f2.shape(), shape);
    EXPECT_EQ(std::memcmp(f.data(), f2.data(), f.size() * 4), 0);
    EXPECT_EQ(u, u2);
  }
}

ContainerFault fault_of(const std::string& bytes, bool want_u8 = false) {
  std::istringstream in(bytes);
  try {
    if (want_u8) {
      decode_u8(in, "mem");
    } else {
      decode_f32(in, "mem");
    }
  } catch (const ContainerError& e) {
    return e.fault();
  }
  ADD_FAILURE() << "decode accepted bad bytes";
  return ContainerFault::io;
}

TEST(Container, DistinctDiagnostics) {
  std::ostringstream out;
  encode_container(out, Tensor<float>({4, 4}, 1.0f));
  const std::string good = out.str();

  std::string magic = good;
  magic[0] = 'X';
  EXPECT_EQ(fault_of(magic), ContainerFault::bad_magic);

  std::string rank = good;
  rank[5] = 9;
  EXPECT_EQ(fault_of(rank), ContainerFault::bad_header);

  EXPECT_EQ(fault_of(good, true), ContainerFault::dtype_mismatch);

  const std::string cut = good.substr(0, good.size() - 10);
  EXPECT_EQ(fault_of(cut), ContainerFault::truncated);
  std::istringstream in(cut);
  try {
    decode_f32(in, "mem");
  } catch (const ContainerError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("64"), std::string::npos) << msg;  // expected payload bytes
    EXPECT_NE(msg.find("54"), std::string::npos) << msg;  // actual payload bytes
  }
}

TrusSample random_sample(Rng& rng, const std::string& id, bool with_mask) {
  TrusSample s;
  s.id = id;
  s.bmode = random_tensor<float>({3, 4, 5, 1}, rng, 0, 1);
  s.swe = random_tensor<float>({3, 4, 5, 1}, rng, 0, 1);
  s.label = with_mask ? 1 : 0;
  if (with_mask) {
    Mask m({3, 4, 5});
    for (auto& v : m) v = static_cast<std::uint8_t>(rng.below(2));
    s.lesion_mask = m;
  }
  return s;
}

TEST(Sample, SaveLoadRoundTrip) {
  TempDir dir("sample");
  Rng rng(23);
  for (bool mask : {false, true}) {
    const TrusSample s = random_sample(rng, mask ? "pos" : "neg", mask);
    save_sample(s, dir / s.id);
    const TrusSample r = load_sample(dir / s.id);
    EXPECT_EQ(r.id, s.id);
    EXPECT_EQ(r.label, s.label);
    EXPECT_EQ(r.bmode, s.bmode);
    EXPECT_EQ(r.swe, s.swe);
    ASSERT_EQ(r.lesion_mask.has_value(), mask);
    if (mask) EXPECT_EQ(*r.lesion_mask, *s.lesion_mask);
  }
}

TEST(Sample, WrongMagicOnDisk) {
  TempDir dir("magic");
  Rng rng(1);
  const TrusSample s = random_sample(rng, "a", false);
  save_sample(s, dir / "a");
  {
    std::fstream f(dir / "a" / "bmode.trus", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("JUNK!", 5);
  }
  try {
    load_sample(dir / "a");
    FAIL();
  } catch (const ContainerError& e) {
    EXPECT_EQ(e.fault(), ContainerFault::bad_magic);
  }
}

TEST(Sample, ValidateRejectsMismatch) {
  TrusSample s;
  s.bmode = Video({2, 2, 2, 1});
  s.swe = Video({2, 2, 3, 1});
  EXPECT_THROW(s.validate(), std::invalid_argument);
  s.swe = Video({2, 2, 2, 1});
  s.lesion_mask = Mask({2, 2, 3});
  EXPECT_THROW(s.validate(), std::invalid_argument);
}

DatasetManifest synthetic_manifest(std::size_t n_pos, std::size_t n_neg) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
    const std::string id = "s" + std::to_string(i);
    m.entries.push_back({id, id + "/b.trus", id + "/s.trus", i < n_pos ? 1 : 0, std::nullopt});
  }
  return m;
}

TEST(Manifest, WriteReadRoundTrip) {
  TempDir dir("manifest");
  DatasetManifest m = synthetic_manifest(3, 2);
  m.entries[0].mask_path = "s0/mask.trus";
  m.master_seed = 42;
  m.split_tag = SplitTag::train;
  write_manifest(m, dir / "m.json");
  const DatasetManifest r = read_manifest(dir / "m.json");
  EXPECT_EQ(r.master_seed, 42u);
  EXPECT_EQ(r.split_tag, SplitTag::train);
  ASSERT_EQ(r.entries.size(), 5u);
  EXPECT_EQ(r.entries[0].mask_path.value_or(""), "s0/mask.trus");
  EXPECT_EQ(r.count(1), 3u);
  EXPECT_EQ(r.root, dir.path());
}

TEST(Manifest, DuplicateIdsRejected) {
  DatasetManifest m = synthetic_manifest(2, 2);
  m.entries[1].id = m.entries[0].id;
  EXPECT_THROW(m.validate(), DataError);
}

TEST(Manifest, TamperedLabelCountsRejected) {
  TempDir dir("counts");
  write_manifest(synthetic_manifest(2, 2), dir / "m.json");
  nlohmann::json doc;
  {
    std::ifstream in(dir / "m.json");
    doc = nlohmann::json::parse(in);
  }
  doc["entries"][0]["label"] = 0;
  {
    std::ofstream out(dir / "m.json");
    out << doc.dump();
  }
  EXPECT_THROW(read_manifest(dir / "m.json"), DataError);
}

TEST(Split, PaperCountsFiveTwelve) {
  const DatasetManifest m = synthetic_manifest(346, 166);
  const auto [tr, te] = split_manifest(m, 112.0 / 512.0, 1);
  EXPECT_EQ(tr.entries.size(), 400u);
  EXPECT_EQ(te.entries.size(), 112u);
}

TEST(Split, TenEntriesFivePositive) {
  const auto [tr, te] = split_manifest(synthetic_manifest(5, 5), 0.2, 9);
  EXPECT_EQ(te.entries.size(), 2u);
  EXPECT_EQ(te.count(1), 1u);
  EXPECT_EQ(te.count(0), 1u);
  EXPECT_EQ(tr.split_tag, SplitTag::train);
  EXPECT_EQ(te.split_tag, SplitTag::test);
}

TEST(Split, SingletonClassRejected) {
  EXPECT_THROW(split_manifest(synthetic_manifest(1, 6), 0.3, 0), DataError);
}

TEST(Split, BadFractionRejected) {
  EXPECT_THROW(split_manifest(synthetic_manifest(4, 4), 0.0, 0), std::invalid_argument);
  EXPECT_THROW(split_manifest(synthetic_manifest(4, 4), 1.0, 0), std::invalid_argument);
}

TEST(Split, PropertiesOnRandomManifests) {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n_pos = 2 + rng.below(40), n_neg = 2 + rng.below(40);
    const double frac = rng.uniform(0.05, 0.95);
    const std::uint64_t seed = rng.next();
    const DatasetManifest m = synthetic_manifest(n_pos, n_neg);
    const auto [tr, te] = split_manifest(m, frac, seed);
    const auto [tr2, te2] = split_manifest(m, frac, seed);

    std::set<std::string> ids;
    for (const auto& e : tr.entries) ids.insert(e.id);
    for (const auto& e : te.entries) EXPECT_TRUE(ids.insert(e.id).second) << "overlap " << e.id;
    EXPECT_EQ(ids.size(), m.entries.size());
    ASSERT_EQ(te.entries.size(), te2.entries.size());
    for (std::size_t i = 0; i < te.entries.size(); ++i) EXPECT_EQ(te.entries[i].id, te2.entries[i].id);

    const double rate = static_cast<double>(n_pos) / (n_pos + n_neg);
    for (const auto* part : {&tr, &te}) {
      const double expected = rate * part->entries.size();
      EXPECT_LE(std::abs(static_cast<double>(part->count(1)) - expected), 1.0 + 1e-9)
          << "n_pos " << n_pos << " n_neg " << n_neg << " frac " << frac;
    }
  }
}

}  // namespace
}  // namespace trus::videodata
