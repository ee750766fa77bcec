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

#include "trus/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace trus::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::size_t out_extent(std::size_t in, std::size_t k, std::size_t s, std::size_t p) {
  if (in + 2 * p < k) throw std::invalid_argument("kernel larger than padded input");
  return (in + 2 * p - k) / s + 1;
}

void require_rank5(const Shape& s, const char* what) {
  if (s.size() != 5) {
    throw std::invalid_argument(std::string(what) + ": expected (N,C,T,H,W), got " + shape_string(s));
  }
}

// Unfolds one sample (C, T, H, W) into rows (c, kt, kh, kw) x columns (output voxel).
template <typename T>
void im2col(const T* x, const Conv3dGeometry& g, const Dims3& in, const Dims3& out, T* col) {
  const std::size_t s_out = out[0] * out[1] * out[2];
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* xc = x + c * in[0] * in[1] * in[2];
    for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
      for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          T* dst = col + row * s_out;
          for (std::size_t ot = 0; ot < out[0]; ++ot) {
            const auto it = static_cast<std::ptrdiff_t>(ot * g.stride[0] + kt) -
                            static_cast<std::ptrdiff_t>(g.padding[0]);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(in[0])) {
              std::fill_n(dst, out[1] * out[2], T{0});
              dst += out[1] * out[2];
              continue;
            }
            for (std::size_t oh = 0; oh < out[1]; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + kh) -
                              static_cast<std::ptrdiff_t>(g.padding[1]);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) {
                std::fill_n(dst, out[2], T{0});
                dst += out[2];
                continue;
              }
              const T* src = xc + (static_cast<std::size_t>(it) * in[1] + static_cast<std::size_t>(ih)) * in[2];
              for (std::size_t ow = 0; ow < out[2]; ++ow) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + kw) -
                                static_cast<std::ptrdiff_t>(g.padding[2]);
                *dst++ = (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in[2])) ? T{0} : src[iw];
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* col, const Conv3dGeometry& g, const Dims3& in, const Dims3& out, T* dx) {
  const std::size_t s_out = out[0] * out[1] * out[2];
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* dxc = dx + c * in[0] * in[1] * in[2];
    for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
      for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
        for (std::size_t kw = 0; kw < g.kernel[2]; ++kw, ++row) {
          const T* src = col + row * s_out;
          for (std::size_t ot = 0; ot < out[0]; ++ot) {
            const auto it = static_cast<std::ptrdiff_t>(ot * g.stride[0] + kt) -
                            static_cast<std::ptrdiff_t>(g.padding[0]);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(in[0])) {
              src += out[1] * out[2];
              continue;
            }
            for (std::size_t oh = 0; oh < out[1]; ++oh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + kh) -
                              static_cast<std::ptrdiff_t>(g.padding[1]);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) {
                src += out[2];
                continue;
              }
              T* dst = dxc + (static_cast<std::size_t>(it) * in[1] + static_cast<std::size_t>(ih)) * in[2];
              for (std::size_t ow = 0; ow < out[2]; ++ow, ++src) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + kw) -
                                static_cast<std::ptrdiff_t>(g.padding[2]);
                if (iw >= 0 && iw < static_cast<std::ptrdiff_t>(in[2])) dst[iw] += *src;
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

Dims3 Conv3dGeometry::output_dims(const Dims3& input) const {
  return {out_extent(input[0], kernel[0], stride[0], padding[0]),
          out_extent(input[1], kernel[1], stride[1], padding[1]),
          out_extent(input[2], kernel[2], stride[2], padding[2])};
}

bool Conv3dGeometry::pointwise() const {
  return kernel == Dims3{1, 1, 1} && stride == Dims3{1, 1, 1} && padding == Dims3{0, 0, 0};
}

Dims3 PoolGeometry::output_dims(const Dims3& input) const {
  return {out_extent(input[0], kernel[0], stride[0], padding[0]),
          out_extent(input[1], kernel[1], stride[1], padding[1]),
          out_extent(input[2], kernel[2], stride[2], padding[2])};
}

Dims3 spatial_dims(const Shape& activation) {
  require_rank5(activation, "spatial_dims");
  return {activation[2], activation[3], activation[4]};
}

template <typename T>
Tensor<T> Tape<T>::pop() {
  if (tensors_.empty()) throw std::logic_error("tape underflow");
  Tensor<T> t = std::move(tensors_.back());
  tensors_.pop_back();
  return t;
}

template <typename T>
std::vector<std::size_t> Tape<T>::pop_index() {
  if (indices_.empty()) throw std::logic_error("tape index underflow");
  auto v = std::move(indices_.back());
  indices_.pop_back();
  return v;
}

template <typename T>
Tensor<T> conv3d_forward(const Tensor<T>& x, const Tensor<T>& weight, const Nullable<T>* bias,
                         const Conv3dGeometry& g) {
  require_rank5(x.shape(), "conv3d");
  if (x.dim(1) != g.in_channels) {
    throw std::invalid_argument("conv3d: input has " + std::to_string(x.dim(1)) +
                                " channels, expected " + std::to_string(g.in_channels));
  }
  if (weight.shape() != g.weight_shape()) {
    throw std::invalid_argument("conv3d: weight shape " + shape_string(weight.shape()) +
                                " does not match geometry " + shape_string(g.weight_shape()));
  }
  const std::size_t n = x.dim(0);
  const Dims3 in = spatial_dims(x.shape());
  const Dims3 out = g.output_dims(in);
  const std::size_t s_in = in[0] * in[1] * in[2];
  const std::size_t s_out = out[0] * out[1] * out[2];
  const std::size_t k = g.fan_in();
  Tensor<T> y({n, g.out_channels, out[0], out[1], out[2]});
  ConstMapMat<T> w(weight.data(), static_cast<Eigen::Index>(g.out_channels), static_cast<Eigen::Index>(k));
  std::vector<T> col(g.pointwise() ? 0 : k * s_out);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.data() + i * g.in_channels * s_in;
    MapMat<T> yi(y.data() + i * g.out_channels * s_out, static_cast<Eigen::Index>(g.out_channels),
                 static_cast<Eigen::Index>(s_out));
    if (g.pointwise()) {
      yi.noalias() = w * ConstMapMat<T>(xi, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s_out));
    } else {
      im2col(xi, g, in, out, col.data());
      yi.noalias() = w * ConstMapMat<T>(col.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s_out));
    }
    if (bias) {
      for (std::size_t o = 0; o < g.out_channels; ++o) yi.row(static_cast<Eigen::Index>(o)).array() += (*bias)[o];
    }
  }
  return y;
}

template <typename T>
Tensor<T> conv3d_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          const Conv3dGeometry& g, Tensor<T>& dweight, Nullable<T>* dbias,
                          bool want_dx) {
  const std::size_t n = x.dim(0);
  const Dims3 in = spatial_dims(x.shape());
  const Dims3 out = g.output_dims(in);
  const std::size_t s_in = in[0] * in[1] * in[2];
  const std::size_t s_out = out[0] * out[1] * out[2];
  const std::size_t k = g.fan_in();
  const auto rows = static_cast<Eigen::Index>(g.out_channels);
  const auto kk = static_cast<Eigen::Index>(k);
  const auto cols = static_cast<Eigen::Index>(s_out);
  if (dy.shape() != Shape{n, g.out_channels, out[0], out[1], out[2]}) {
    throw std::invalid_argument("conv3d_backward: gradient shape " + shape_string(dy.shape()) +
                                " does not match output");
  }
  ConstMapMat<T> w(weight.data(), rows, kk);
  MapMat<T> dw(dweight.data(), rows, kk);
  Tensor<T> dx;
  if (want_dx) dx = Tensor<T>(x.shape());
  std::vector<T> col(g.pointwise() ? 0 : k * s_out);
  std::vector<T> dcol(g.pointwise() || !want_dx ? 0 : k * s_out);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.data() + i * g.in_channels * s_in;
    ConstMapMat<T> dyi(dy.data() + i * g.out_channels * s_out, rows, cols);
    if (dbias) {
      for (std::size_t o = 0; o < g.out_channels; ++o) (*dbias)[o] += dyi.row(static_cast<Eigen::Index>(o)).sum();
    }
    if (g.pointwise()) {
      dw.noalias() += dyi * ConstMapMat<T>(xi, kk, cols).transpose();
      if (want_dx) {
        MapMat<T>(dx.data() + i * g.in_channels * s_in, kk, cols).noalias() = w.transpose() * dyi;
      }
    } else {
      im2col(xi, g, in, out, col.data());
      dw.noalias() += dyi * ConstMapMat<T>(col.data(), kk, cols).transpose();
      if (want_dx) {
        MapMat<T>(dcol.data(), kk, cols).noalias() = w.transpose() * dyi;
        col2im(dcol.data(), g, in, out, dx.data() + i * g.in_channels * s_in);
      }
    }
  }
  return dx;
}

template <typename T>
Tensor<T> group_norm_forward(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             std::size_t groups, T eps, Tape<T>* tape) {
  require_rank5(x.shape(), "group_norm");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (groups == 0 || c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.size() != c || beta.size() != c) throw std::invalid_argument("group_norm: affine size mismatch");
  const std::size_t s = x.size() / (n * c);
  const std::size_t cg = c / groups;
  const std::size_t m = cg * s;
  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std({n, groups});
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (i * c + gi * cg) * s;
      double sum = 0.0;
      for (std::size_t j = 0; j < m; ++j) sum += x[base + j];
      const double mean = sum / static_cast<double>(m);
      double var = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double d = x[base + j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(m);
      const double istd = 1.0 / std::sqrt(var + static_cast<double>(eps));
      inv_std[i * groups + gi] = static_cast<T>(istd);
      for (std::size_t ch = 0; ch < cg; ++ch) {
        const std::size_t cc = gi * cg + ch;
        const T ga = gamma[cc], be = beta[cc];
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t idx = base + ch * s + j;
          const T xh = static_cast<T>((x[idx] - mean) * istd);
          xhat[idx] = xh;
          y[idx] = ga * xh + be;
        }
      }
    }
  }
  if (tape) {
    tape->push(std::move(xhat));
    tape->push(std::move(inv_std));
  }
  return y;
}

template <typename T>
Tensor<T> group_norm_backward(const Tensor<T>& dy, const Tensor<T>& gamma, std::size_t groups,
                              Tape<T>& tape, Tensor<T>& dgamma, Tensor<T>& dbeta) {
  const Tensor<T> inv_std = tape.pop();
  const Tensor<T> xhat = tape.pop();
  const std::size_t n = dy.dim(0), c = dy.dim(1);
  const std::size_t s = dy.size() / (n * c);
  const std::size_t cg = c / groups;
  const double m = static_cast<double>(cg * s);
  Tensor<T> dx(dy.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t gi = 0; gi < groups; ++gi) {
      const std::size_t base = (i * c + gi * cg) * s;
      double sum_dxh = 0.0, sum_dxh_xh = 0.0;
      for (std::size_t ch = 0; ch < cg; ++ch) {
        const std::size_t cc = gi * cg + ch;
        double dg = 0.0, db = 0.0;
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t idx = base + ch * s + j;
          dg += static_cast<double>(dy[idx]) * xhat[idx];
          db += dy[idx];
          const double dxh = static_cast<double>(dy[idx]) * gamma[cc];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xhat[idx];
        }
        dgamma[cc] += static_cast<T>(dg);
        dbeta[cc] += static_cast<T>(db);
      }
      const double istd = inv_std[i * groups + gi];
      for (std::size_t ch = 0; ch < cg; ++ch) {
        const std::size_t cc = gi * cg + ch;
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t idx = base + ch * s + j;
          const double dxh = static_cast<double>(dy[idx]) * gamma[cc];
          dx[idx] = static_cast<T>(istd / m * (m * dxh - sum_dxh - xhat[idx] * sum_dxh_xh));
        }
      }
    }
  }
  return dx;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (T& v : x) v = v > T{0} ? v : T{0};
}

template <typename T>
void relu_backward_inplace(Tensor<T>& dy, const Tensor<T>& y) {
  for (std::size_t i = 0; i < dy.size(); ++i) {
    if (!(y[i] > T{0})) dy[i] = T{0};
  }
}

template <typename T>
Tensor<T> max_pool3d_forward(const Tensor<T>& x, const PoolGeometry& g, Tape<T>* tape) {
  require_rank5(x.shape(), "max_pool3d");
  const std::size_t nc = x.dim(0) * x.dim(1);
  const Dims3 in = spatial_dims(x.shape());
  const Dims3 out = g.output_dims(in);
  const std::size_t s_in = in[0] * in[1] * in[2];
  Tensor<T> y({x.dim(0), x.dim(1), out[0], out[1], out[2]});
  std::vector<std::size_t> arg(y.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < nc; ++p) {
    const T* xp = x.data() + p * s_in;
    for (std::size_t ot = 0; ot < out[0]; ++ot) {
      for (std::size_t oh = 0; oh < out[1]; ++oh) {
        for (std::size_t ow = 0; ow < out[2]; ++ow, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t kt = 0; kt < g.kernel[0]; ++kt) {
            const auto it = static_cast<std::ptrdiff_t>(ot * g.stride[0] + kt) - static_cast<std::ptrdiff_t>(g.padding[0]);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(in[0])) continue;
            for (std::size_t kh = 0; kh < g.kernel[1]; ++kh) {
              const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride[1] + kh) - static_cast<std::ptrdiff_t>(g.padding[1]);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) continue;
              for (std::size_t kw = 0; kw < g.kernel[2]; ++kw) {
                const auto iw = static_cast<std::ptrdiff_t>(ow * g.stride[2] + kw) - static_cast<std::ptrdiff_t>(g.padding[2]);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in[2])) continue;
                const std::size_t idx = (static_cast<std::size_t>(it) * in[1] + static_cast<std::size_t>(ih)) * in[2] +
                                        static_cast<std::size_t>(iw);
                if (xp[idx] > best) {
                  best = xp[idx];
                  best_idx = idx;
                }
              }
            }
          }
          y[o] = best;
          arg[o] = p * s_in + best_idx;
        }
      }
    }
  }
  if (tape) tape->push_index(std::move(arg));
  return y;
}

template <typename T>
Tensor<T> max_pool3d_backward(const Tensor<T>& dy, const Shape& input_shape, Tape<T>& tape) {
  const std::vector<std::size_t> arg = tape.pop_index();
  Tensor<T> dx(input_shape);
  for (std::size_t o = 0; o < dy.size(); ++o) dx[arg[o]] += dy[o];
  return dx;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  require_rank5(x.shape(), "global_avg_pool");
  const std::size_t nc = x.dim(0) * x.dim(1);
  const std::size_t s = x.size() / nc;
  Tensor<T> y({x.dim(0), x.dim(1)});
  for (std::size_t p = 0; p < nc; ++p) {
    double sum = 0.0;
    for (std::size_t j = 0; j < s; ++j) sum += x[p * s + j];
    y[p] = static_cast<T>(sum / static_cast<double>(s));
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool_backward(const Tensor<T>& dy, const Shape& input_shape) {
  Tensor<T> dx(input_shape);
  const std::size_t nc = input_shape[0] * input_shape[1];
  const std::size_t s = dx.size() / nc;
  for (std::size_t p = 0; p < nc; ++p) {
    const T g = dy[p] / static_cast<T>(s);
    std::fill_n(dx.data() + p * s, s, g);
  }
  return dx;
}

template <typename T>
Tensor<T> linear_forward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in || bias.size() != out) throw std::invalid_argument("linear: shape mismatch");
  Tensor<T> y({n, out});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = bias[o];
      for (std::size_t j = 0; j < in; ++j) acc += static_cast<double>(x[i * in + j]) * weight[o * in + j];
      y[i * out + o] = static_cast<T>(acc);
    }
  }
  return y;
}

template <typename T>
Tensor<T> linear_backward(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& dy,
                          Tensor<T>& dweight, Tensor<T>& dbias) {
  const std::size_t n = x.dim(0), in = x.dim(1), out = weight.dim(0);
  Tensor<T> dx(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t o = 0; o < out; ++o) {
      const T g = dy[i * out + o];
      dbias[o] += g;
      for (std::size_t j = 0; j < in; ++j) {
        dweight[o * in + j] += g * x[i * in + j];
        dx[i * in + j] += g * weight[o * in + j];
      }
    }
  }
  return dx;
}

template <typename T>
void add_inplace(Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

#define TRUS_INSTANTIATE_LAYERS(T)                                                                \
  template class Tape<T>;                                                                         \
  template Tensor<T> conv3d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,         \
                                    const Conv3dGeometry&);                                       \
  template Tensor<T> conv3d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     const Conv3dGeometry&, Tensor<T>&, Tensor<T>*, bool);        \
  template Tensor<T> group_norm_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                        std::size_t, T, Tape<T>*);                                \
  template Tensor<T> group_norm_backward(const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                         Tape<T>&, Tensor<T>&, Tensor<T>&);                       \
  template void relu_inplace(Tensor<T>&);                                                         \
  template void relu_backward_inplace(Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> max_pool3d_forward(const Tensor<T>&, const PoolGeometry&, Tape<T>*);         \
  template Tensor<T> max_pool3d_backward(const Tensor<T>&, const Shape&, Tape<T>&);               \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                           \
  template Tensor<T> global_avg_pool_backward(const Tensor<T>&, const Shape&);                    \
  template Tensor<T> linear_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);        \
  template Tensor<T> linear_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     Tensor<T>&, Tensor<T>&);                                     \
  template void add_inplace(Tensor<T>&, const Tensor<T>&);

TRUS_INSTANTIATE_LAYERS(float)
TRUS_INSTANTIATE_LAYERS(double)

}  // namespace trus::nn
