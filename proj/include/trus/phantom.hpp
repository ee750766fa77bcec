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
#include <string>
#include <vector>

#include "trus/rng.hpp"
#include "trus/videodata.hpp"

namespace trus::phantom {

/// Synthetic paired B-mode/SWE video generator settings.
///
/// Positives carry one true lesion: hypoechoic on B-mode and stiff on SWE at the
/// same location. With probability `distractor_rate`, a negative carries a decoy
/// pair instead: one B-mode-only dark blob and one SWE-only bright blob at
/// disjoint locations. Each modality alone therefore sees the same number of
/// blobs in both classes once distractor_rate reaches 1; only the co-location
/// decides the label.
struct PhantomConfig {
  std::size_t n_samples = 160;
  double positive_fraction = 0.5;
  std::array<std::size_t, 4> dims{16, 32, 32, 1};  // T, H, W, C
  double speckle_scale = 0.5;
  double bmode_contrast = 0.5;
  double swe_stiffness_gain = 1.0;
  std::array<double, 2> lesion_radius_range{0.12, 0.2};  // fraction of min(H, W)
  double distractor_rate = 0.5;
  std::uint64_t master_seed = 2024;

  /// Throws std::invalid_argument naming the first violated rule.
  void validate() const;
};

enum class LesionKind { true_lesion, bmode_only_distractor, swe_only_distractor };
std::string to_string(LesionKind kind);

struct LesionSpec {
  std::array<double, 3> center{};  // t, h, w (voxels)
  std::array<double, 3> radii{};   // rt, rh, rw (voxels)
  LesionKind kind = LesionKind::true_lesion;

  bool darkens_bmode() const { return kind != LesionKind::swe_only_distractor; }
  bool stiffens_swe() const { return kind != LesionKind::bmode_only_distractor; }
};

struct GeneratedSample {
  videodata::TrusSample sample;
  std::vector<LesionSpec> lesions;
};

using trus::derive_sample_seed;

GeneratedSample generate_sample(const PhantomConfig& config, std::uint64_t sample_seed, int label,
                                const std::string& id = "phantom");

/// Raised-cosine lesion weight: 1 well inside, 0 outside, 2-voxel ramp at the boundary.
double lesion_taper(const LesionSpec& lesion, double t, double h, double w);

/// Number of positives generate_dataset produces for `config`.
std::size_t positive_count(const PhantomConfig& config);

/// Writes every sample plus manifest.json under `out_dir`; returns the manifest.
videodata::DatasetManifest generate_dataset(const PhantomConfig& config,
                                            const std::filesystem::path& out_dir);

}  // namespace trus::phantom
