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

#include <Eigen/Dense>
#include <span>
#include <string>
#include <vector>

#include "trus/tensor.hpp"

namespace trus::ortho {

template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// A convolution kernel viewed as (out_channels, fan_in).
template <typename T>
struct KernelMatrix {
  Matrix<T> matrix;
  std::string origin;
};

enum class PenaltyForm {
  abs_deviation,  // sum_ij |(W W^T - I)_ij|
  off_diagonal,   // sum_{i != j} |(W W^T)_ij|
};

std::string to_string(PenaltyForm form);
PenaltyForm penalty_form_from_string(const std::string& text);

/// Rejects rank < 2 (biases, norm affines, anything that is not a kernel).
template <typename T>
KernelMatrix<T> kernel_matrix(const Tensor<T>& kernel, std::string origin = {});

template <typename T>
T ortho_penalty(const KernelMatrix<T>& w, PenaltyForm form = PenaltyForm::abs_deviation);

/// Penalty of a kernel tensor; when `grad` is given it receives dR/dW (same shape).
/// At a zero deviation entry the subgradient 0 is used.
template <typename T>
T ortho_penalty(const Tensor<T>& kernel, PenaltyForm form, Nullable<T>* grad);

/// Mean two-class cross-entropy; `dlogits` (optional) receives its gradient.
template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Nullable<T>* dlogits = nullptr);

template <typename T>
struct LossTerms {
  T total = 0;
  T cross_entropy = 0;
  T penalty = 0;  // unweighted sum over kernels
};

/// total = mean CE + lambda * sum_k R(W_k). Gradients are written when the
/// output pointers are given; kernel_grads[k] gets lambda * dR/dW_k.
template <typename T>
LossTerms<T> total_loss(const Tensor<T>& logits, std::span<const int> labels,
                        std::span<const Tensor<T>* const> kernels, T lambda,
                        PenaltyForm form = PenaltyForm::abs_deviation, Nullable<T>* dlogits = nullptr,
                        std::vector<Tensor<T>>* kernel_grads = nullptr);

}  // namespace trus::ortho
