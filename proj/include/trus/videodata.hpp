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

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "trus/tensor.hpp"

namespace trus::videodata {

/// Video tensor with axis order (T, H, W, C).
using Video = Tensor<float>;
/// Binary lesion mask with axis order (T, H, W).
using Mask = Tensor<std::uint8_t>;

struct TrusSample {
  std::string id;
  Video bmode;
  Video swe;
  int label = 0;  // 1 = csPCa
  std::optional<Mask> lesion_mask;

  /// Throws std::invalid_argument if shapes, label or mask disagree.
  void validate() const;
  std::size_t frames() const { return bmode.dim(0); }
  std::size_t height() const { return bmode.dim(1); }
  std::size_t width() const { return bmode.dim(2); }
  std::size_t channels() const { return bmode.dim(3); }
};

/// Per-video min-max scaling into [0, 1]; constant videos map to zeros.
Video normalize_intensities(const Video& raw);

/// Trilinear resize over (T, H, W) with endpoint-aligned sampling; channels untouched.
Video resize_video(const Video& video, const std::array<std::size_t, 3>& target);

// --- binary container ------------------------------------------------------
//
// Layout (little-endian):
//   5 bytes  magic "TRUS1"
//   u8       rank (1..4)
//   u32 x 4  dims (unused trailing dims are 1)
//   u8       dtype code
//   payload  row-major, float32 or u8

enum class DType : std::uint8_t { f32 = 1, u8 = 2 };

inline constexpr std::size_t kContainerHeaderBytes = 5 + 1 + 16 + 1;

void encode_container(std::ostream& out, const Tensor<float>& tensor);
void encode_container(std::ostream& out, const Tensor<std::uint8_t>& tensor);
Tensor<float> decode_f32(std::istream& in, const std::string& source);
Tensor<std::uint8_t> decode_u8(std::istream& in, const std::string& source);

void write_container(const std::filesystem::path& path, const Tensor<float>& tensor);
void write_container(const std::filesystem::path& path, const Tensor<std::uint8_t>& tensor);
Tensor<float> read_f32(const std::filesystem::path& path);
Tensor<std::uint8_t> read_u8(const std::filesystem::path& path);

/// Writes bmode.trus, swe.trus, optional mask.trus and sample.json into `dir`.
void save_sample(const TrusSample& sample, const std::filesystem::path& dir);
TrusSample load_sample(const std::filesystem::path& dir);

// --- manifests ---------------------------------------------------------------

enum class SplitTag { train, test, all };
std::string to_string(SplitTag tag);
SplitTag split_tag_from_string(const std::string& text);

struct ManifestEntry {
  std::string id;
  std::string bmode_path;  // relative to the manifest's directory
  std::string swe_path;
  int label = 0;
  std::optional<std::string> mask_path;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  std::uint64_t master_seed = 0;
  SplitTag split_tag = SplitTag::all;
  /// Directory that relative entry paths resolve against; not serialized.
  std::filesystem::path root;

  std::size_t count(int label) const;
  /// Throws DataError on duplicate ids or bad labels.
  void validate() const;
  const ManifestEntry& find(const std::string& id) const;
};

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Loads the arrays referenced by `entry`; label comes from the manifest.
TrusSample load_entry(const DatasetManifest& manifest, const ManifestEntry& entry);

/// Stratified, seed-deterministic split; returns (train, test).
std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double test_fraction,
                                                           std::uint64_t seed);

}  // namespace trus::videodata
