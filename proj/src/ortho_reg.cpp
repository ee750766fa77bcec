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

#include "trus/ortho_reg.hpp"

#include <cmath>
#include <stdexcept>

#include "trus/error.hpp"

namespace trus::ortho {

namespace {

template <typename T>
Eigen::Map<const Matrix<T>> as_matrix(const Tensor<T>& kernel) {
  if (kernel.rank() < 2 || kernel.empty()) {
    throw std::invalid_argument("orthogonal penalty applies to convolution kernels only (rank >= 2), got " +
                                shape_string(kernel.shape()));
  }
  const auto rows = static_cast<Eigen::Index>(kernel.dim(0));
  return {kernel.data(), rows, static_cast<Eigen::Index>(kernel.size()) / rows};
}

template <typename T>
Matrix<T> deviation(const Eigen::Ref<const Matrix<T>>& w, PenaltyForm form) {
  Matrix<T> d = w * w.transpose();
  if (form == PenaltyForm::abs_deviation) {
    d.diagonal().array() -= T{1};
  } else {
    d.diagonal().setZero();
  }
  return d;
}

template <typename T>
T sign(T v) {
  return static_cast<T>((v > T{0}) - (v < T{0}));
}

}  // namespace

std::string to_string(PenaltyForm form) {
  return form == PenaltyForm::abs_deviation ? "abs_deviation" : "off_diagonal";
}

PenaltyForm penalty_form_from_string(const std::string& text) {
  if (text == "abs_deviation") return PenaltyForm::abs_deviation;
  if (text == "off_diagonal") return PenaltyForm::off_diagonal;
  throw UsageError("unknown penalty form '" + text + "' (expected abs_deviation or off_diagonal)");
}

template <typename T>
KernelMatrix<T> kernel_matrix(const Tensor<T>& kernel, std::string origin) {
  return {Matrix<T>(as_matrix(kernel)), std::move(origin)};
}

template <typename T>
T ortho_penalty(const KernelMatrix<T>& w, PenaltyForm form) {
  return deviation<T>(w.matrix, form).cwiseAbs().sum();
}

template <typename T>
T ortho_penalty(const Tensor<T>& kernel, PenaltyForm form, Nullable<T>* grad) {
  const auto w = as_matrix(kernel);
  const Matrix<T> d = deviation<T>(w, form);
  if (grad) {
    // d/dW sum |D| with D = W W^T - I symmetric: (S + S^T) W = 2 S W.
    const Matrix<T> s = d.unaryExpr([](T v) { return sign(v); });
    *grad = Tensor<T>(kernel.shape());
    Eigen::Map<Matrix<T>>(grad->data(), w.rows(), w.cols()).noalias() = T{2} * s * w;
  }
  return d.cwiseAbs().sum();
}

template <typename T>
T cross_entropy(const Tensor<T>& logits, std::span<const int> labels, Nullable<T>* dlogits) {
  if (logits.rank() != 2 || logits.dim(1) != 2) {
    throw std::invalid_argument("cross_entropy: logits must be (N, 2), got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.dim(0);
  if (n == 0) throw std::invalid_argument("cross_entropy: empty batch");
  if (labels.size() != n) throw std::invalid_argument("cross_entropy: label count does not match batch");
  if (dlogits) *dlogits = Tensor<T>(logits.shape());
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y != 0 && y != 1) throw std::invalid_argument("cross_entropy: labels must be 0 or 1");
    const double z0 = logits[2 * i], z1 = logits[2 * i + 1];
    const double top = std::max(z0, z1);
    const double lse = top + std::log(std::exp(z0 - top) + std::exp(z1 - top));
    loss += lse - (y == 1 ? z1 : z0);
    if (dlogits) {
      const double p1 = std::exp(z1 - lse);
      (*dlogits)[2 * i] = static_cast<T>(((1.0 - p1) - (y == 0 ? 1.0 : 0.0)) / static_cast<double>(n));
      (*dlogits)[2 * i + 1] = static_cast<T>((p1 - (y == 1 ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  return static_cast<T>(loss / static_cast<double>(n));
}

template <typename T>
LossTerms<T> total_loss(const Tensor<T>& logits, std::span<const int> labels,
                        std::span<const Tensor<T>* const> kernels, T lambda, PenaltyForm form,
                        Nullable<T>* dlogits, std::vector<Tensor<T>>* kernel_grads) {
  if (!(lambda >= T{0})) throw std::invalid_argument("total_loss: lambda must be >= 0");
  LossTerms<T> terms;
  terms.cross_entropy = cross_entropy(logits, labels, dlogits);
  if (kernel_grads) kernel_grads->assign(kernels.size(), Tensor<T>());
  double penalty = 0.0;
  for (std::size_t k = 0; k < kernels.size(); ++k) {
    Tensor<T>* g = kernel_grads ? &(*kernel_grads)[k] : nullptr;
    penalty += ortho_penalty(*kernels[k], form, g);
    if (g) {
      for (T& v : *g) v *= lambda;
    }
  }
  terms.penalty = static_cast<T>(penalty);
  terms.total = terms.cross_entropy + lambda * terms.penalty;
  return terms;
}

#define TRUS_INSTANTIATE_ORTHO(T)                                                                    \
  template KernelMatrix<T> kernel_matrix(const Tensor<T>&, std::string);                             \
  template T ortho_penalty(const KernelMatrix<T>&, PenaltyForm);                                     \
  template T ortho_penalty(const Tensor<T>&, PenaltyForm, Tensor<T>*);                               \
  template T cross_entropy(const Tensor<T>&, std::span<const int>, Tensor<T>*);                      \
  template LossTerms<T> total_loss(const Tensor<T>&, std::span<const int>,                           \
                                   std::span<const Tensor<T>* const>, T, PenaltyForm, Tensor<T>*,    \
                                   std::vector<Tensor<T>>*);

TRUS_INSTANTIATE_ORTHO(float)
TRUS_INSTANTIATE_ORTHO(double)

}  // namespace trus::ortho
