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

// Adaptive spatial fusion of two modality feature maps.
//
//   m   = (f_x + f_e) / 2
//   w_x = sigmoid(IN_x(conv_x([m, f_x])))      w_e likewise with conv_e, IN_e
//   (ŵ_x, ŵ_e) = softmax over the two modalities, per voxel
//   fused = ŵ_x * f_x + ŵ_e * f_e              (weights broadcast over channels)
//   branch_x = f_x + fused,  branch_e = f_e + fused
//
// conv_* are 1x1x1 convolutions from 2C channels to one attention map, stride 1.

#include <cstddef>
#include <vector>

#include "trus/tensor.hpp"

namespace trus::fusion {

inline constexpr double kInstanceNormEps = 1e-5;

template <typename T>
struct FusionBlockParams {
  std::size_t channels = 0;
  /// 2C weights each; the first C act on the modality mean, the last C on the modality itself.
  std::vector<T> conv_x, conv_e;
  T bias_x = 0, bias_e = 0;
  T in_x_scale = 1, in_x_shift = 0;
  T in_e_scale = 1, in_e_shift = 0;
  /// When false the conv output feeds the sigmoid directly.
  bool instance_norm = true;

  static FusionBlockParams zeros(std::size_t channels);
  void validate() const;
};

/// Feature maps (N, C, T, H, W) from the two branches at one stage.
template <typename T>
struct StageFeatures {
  Tensor<T> f_x, f_e;
  void validate() const;
};

/// One attention map per modality, (N, 1, T, H, W).
template <typename T>
struct WeightMaps {
  Tensor<T> x, e;
};

template <typename T>
struct AsfOutput {
  Tensor<T> fused, branch_x, branch_e;
};

/// Intermediates saved by a forward pass for asf_backward.
template <typename T>
struct AsfCache {
  Tensor<T> xhat_x, xhat_e;            // instance-normalized conv outputs
  std::vector<T> inv_std_x, inv_std_e;  // per sample
  WeightMaps<T> raw, normalized;
};

template <typename T>
struct AsfGradients {
  Tensor<T> d_f_x, d_f_e;
  /// Total gradient reaching the fused map (head + both branches).
  Tensor<T> d_fused;
  FusionBlockParams<T> d_params;
};

template <typename T>
WeightMaps<T> compute_raw_weights(const StageFeatures<T>& feats, const FusionBlockParams<T>& params,
                                  AsfCache<T>* cache = nullptr);

template <typename T>
WeightMaps<T> normalize_weights(const WeightMaps<T>& raw);

template <typename T>
Tensor<T> fuse(const StageFeatures<T>& feats, const WeightMaps<T>& normalized);

template <typename T>
AsfOutput<T> asf_forward(const StageFeatures<T>& feats, const FusionBlockParams<T>& params,
                         AsfCache<T>* cache = nullptr);

/// Any of the incoming gradients may be null (treated as zero).
template <typename T>
AsfGradients<T> asf_backward(const StageFeatures<T>& feats, const FusionBlockParams<T>& params,
                             const AsfCache<T>& cache, const Nullable<T>* d_fused,
                             const Nullable<T>* d_branch_x, const Nullable<T>* d_branch_e);

}  // namespace trus::fusion
