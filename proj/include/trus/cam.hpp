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

#include "trus/network.hpp"
#include "trus/videodata.hpp"

namespace trus::cam {

struct HeatVolume {
  Tensor<float> values;     // (T', H', W') rectified, feature resolution
  Tensor<float> upsampled;  // (T, H, W) in [0, 1]
  std::string target_layer;
  int target_class = 1;
};

/// Stage index for "stage1".."stage4"; throws UsageError listing the valid ids.
std::size_t layer_index(const std::string& layer);

/// Grad-CAM from a (1, C, T', H', W') activation and its gradient, upsampled to `input_dims`.
HeatVolume grad_cam_from(const Tensor<float>& activation, const Tensor<float>& gradient,
                         const std::array<std::size_t, 3>& input_dims, std::string layer = {}, int target_class = 1);

HeatVolume grad_cam(const net::Model<float>& model, const videodata::TrusSample& sample,
                    const std::string& layer = "stage4", int target_class = 1);

/// Trilinear resize of a (T, H, W) volume with half-pixel centers and edge clamping.
Tensor<float> upsample_volume(const Tensor<float>& volume, const std::array<std::size_t, 3>& target);

/// Five stops at h = 0, .25, .5, .75, 1: blue, cyan, green, yellow, red; linear between stops.
std::array<double, 3> colormap(double h);

struct Frame {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel
};

/// out = (1 - alpha*h) * gray + alpha*h * colormap(h), per pixel, over B-mode channel 0.
std::vector<Frame> overlay(const videodata::TrusSample& sample, const HeatVolume& heat, double alpha);

/// Writes frame_0000.ppm, frame_0001.ppm, ... into `dir`.
void write_frames(const std::vector<Frame>& frames, const std::filesystem::path& dir);

struct Localization {
  bool hit = false;
  std::array<std::size_t, 3> peak{};  // t, h, w
  /// Euclidean distance in voxels from the peak to the nearest mask voxel.
  double distance = 0;
  double radius = 0;
};

/// Hit iff the heat argmax (lowest linear index on ties) lies within
/// radius_fraction * min(H, W) voxels of the lesion mask. An all-zero map never hits.
Localization localization_score(const HeatVolume& heat, const videodata::Mask& mask, double radius_fraction = 0.1);

}  // namespace trus::cam
