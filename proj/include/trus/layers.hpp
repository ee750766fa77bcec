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

// Forward/backward kernels for the 3-D layers of the backbone. Activations use
// the (N, C, T, H, W) layout throughout.

#include <array>
#include <cstddef>
#include <vector>

#include "trus/tensor.hpp"

namespace trus::nn {

using Dims3 = std::array<std::size_t, 3>;

struct Conv3dGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  Dims3 kernel{1, 1, 1};
  Dims3 stride{1, 1, 1};
  Dims3 padding{0, 0, 0};

  Dims3 output_dims(const Dims3& input) const;
  std::size_t kernel_volume() const { return kernel[0] * kernel[1] * kernel[2]; }
  std::size_t fan_in() const { return in_channels * kernel_volume(); }
  Shape weight_shape() const {
    return {out_channels, in_channels, kernel[0], kernel[1], kernel[2]};
  }
  bool pointwise() const;
};

/// Stack of saved activations; backward passes pop in reverse order of the pushes.
template <typename T>
class Tape {
 public:
  void push(Tensor<T> t) { tensors_.push_back(std::move(t)); }
  Tensor<T> pop();
  void push_index(std::vector<std::size_t> idx) { indices_.push_back(std::move(idx)); }
  std::vector<std::size_t> pop_index();
  bool empty() const { return tensors_.empty() && indices_.empty(); }
  void clear() {
    tensors_.clear();
    indices_.clear();
  }

 private:
  std::vector<Tensor<T>> tensors_;
  std::vector<std::vector<std::size_t>> indices_;
};

Dims3 spatial_dims(const Shape& activation);

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Nullable<T>* bias,
                         const Conv3dGeometry& geom);

/// Accumulates into dweight (and dbias when given); returns dx when want_dx.
template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          const Conv3dGeometry& geom, Tensor<T>& dweight, Nullable<T>* dbias,
                          bool want_dx = true);

/// Group normalization over (C/groups, T, H, W) per sample with per-channel affine.
/// Saves (xhat, inv_std) on the tape when one is given.
template <typename T>
Tensor<T> group_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             std::size_t groups, T eps, Tape<T>* tape);

template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, std::size_t groups,
                              Tape<T>& tape, Tensor<T>& dgamma, Tensor<T>& dbeta);

template <typename T>
void relu_inplace(Tensor<T>& x);

/// dy masked by y > 0; y is the ReLU output.
template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& y);

struct PoolGeometry {
  Dims3 kernel{3, 3, 3};
  Dims3 stride{1, 2, 2};
  Dims3 padding{1, 1, 1};
  Dims3 output_dims(const Dims3& input) const;
};

/// Max pooling; saves argmax positions on the tape when one is given.
template <typename T>
Tensor<T> max_pool3d_forward(const Tensor<T>& x, const PoolGeometry& geom, Tape<T>* tape);

template <typename T>
Tensor<T> max_pool3d_backward(const Tensor<T>& dy, const Shape& input_shape, Tape<T>& tape);

/// (N, C, T, H, W) -> (N, C)
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x);

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const Shape& input_shape);

/// y = x W^T + b with x (N, in), W (out, in).
template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          Tensor<T>& dweight, Tensor<T>& dbias);

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b);

}  // namespace trus::nn
