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

#include "trus/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace trus::fusion {

namespace {

template <typename T>
T sigmoid(T v) {
  return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
}

struct Layout {
  std::size_t n, c, s;
};

template <typename T>
Layout layout_of(const Tensor<T>& f) {
  if (f.rank() != 5) throw std::invalid_argument("fusion: features must be (N,C,T,H,W), got " + shape_string(f.shape()));
  return {f.dim(0), f.dim(1), f.size() / (f.dim(0) * f.dim(1))};
}

template <typename T>
Shape map_shape(const Tensor<T>& f) {
  return {f.dim(0), 1, f.dim(2), f.dim(3), f.dim(4)};
}

// z = conv([m, f]) + bias for one modality, then optional instance norm + affine, then sigmoid.
template <typename T>
Tensor<T> attention_map(const Tensor<T>& mean, const Tensor<T>& f, const std::vector<T>& kernel, T bias,
                        bool instance_norm, T scale, T shift, Tensor<T>* xhat_out,
                        std::vector<T>* inv_std_out) {
  const Layout l = layout_of(f);
  Tensor<T> z(map_shape(f));
  for (std::size_t i = 0; i < l.n; ++i) {
    T* zi = z.data() + i * l.s;
    std::fill_n(zi, l.s, bias);
    for (std::size_t c = 0; c < l.c; ++c) {
      const T a = kernel[c], b = kernel[l.c + c];
      const T* mc = mean.data() + (i * l.c + c) * l.s;
      const T* fc = f.data() + (i * l.c + c) * l.s;
      for (std::size_t j = 0; j < l.s; ++j) zi[j] += a * mc[j] + b * fc[j];
    }
  }
  Tensor<T> w(z.shape());
  if (!instance_norm) {
    for (std::size_t k = 0; k < z.size(); ++k) w[k] = sigmoid(z[k]);
    return w;
  }
  Tensor<T> xhat(z.shape());
  std::vector<T> inv_std(l.n);
  for (std::size_t i = 0; i < l.n; ++i) {
    const T* zi = z.data() + i * l.s;
    double mu = 0.0;
    for (std::size_t j = 0; j < l.s; ++j) mu += zi[j];
    mu /= static_cast<double>(l.s);
    double var = 0.0;
    for (std::size_t j = 0; j < l.s; ++j) var += (zi[j] - mu) * (zi[j] - mu);
    var /= static_cast<double>(l.s);
    const double istd = 1.0 / std::sqrt(var + kInstanceNormEps);
    inv_std[i] = static_cast<T>(istd);
    for (std::size_t j = 0; j < l.s; ++j) {
      const T xh = static_cast<T>((zi[j] - mu) * istd);
      xhat[i * l.s + j] = xh;
      w[i * l.s + j] = sigmoid(scale * xh + shift);
    }
  }
  if (xhat_out) *xhat_out = std::move(xhat);
  if (inv_std_out) *inv_std_out = std::move(inv_std);
  return w;
}

template <typename T>
Tensor<T> modality_mean(const StageFeatures<T>& feats) {
  Tensor<T> m(feats.f_x.shape());
  for (std::size_t k = 0; k < m.size(); ++k) m[k] = (feats.f_x[k] + feats.f_e[k]) / T{2};
  return m;
}

// Backward through sigmoid, instance norm and the 1x1x1 conv of one modality.
// Accumulates d(mean) and d(f) for the features.
template <typename T>
void attention_backward(const Tensor<T>& dw, const Tensor<T>& w, const Tensor<T>& mean, const Tensor<T>& f,
                        const std::vector<T>& kernel, bool instance_norm, T scale, const Tensor<T>& xhat,
                        const std::vector<T>& inv_std, std::vector<T>& d_kernel, T& d_bias, T& d_scale,
                        T& d_shift, Tensor<T>& d_mean, Tensor<T>& d_f) {
  const Layout l = layout_of(f);
  Tensor<T> dz(w.shape());
  for (std::size_t i = 0; i < l.n; ++i) {
    const std::size_t off = i * l.s;
    if (!instance_norm) {
      for (std::size_t j = 0; j < l.s; ++j) dz[off + j] = dw[off + j] * w[off + j] * (T{1} - w[off + j]);
      continue;
    }
    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
    for (std::size_t j = 0; j < l.s; ++j) {
      const double du = static_cast<double>(dw[off + j]) * w[off + j] * (T{1} - w[off + j]);
      d_scale += static_cast<T>(du * xhat[off + j]);
      d_shift += static_cast<T>(du);
      const double dxh = du * scale;
      sum_dxh += dxh;
      sum_dxh_xh += dxh * xhat[off + j];
      dz[off + j] = static_cast<T>(dxh);
    }
    const double s = static_cast<double>(l.s);
    const double istd = inv_std[i];
    for (std::size_t j = 0; j < l.s; ++j) {
      dz[off + j] = static_cast<T>(istd / s * (s * dz[off + j] - sum_dxh - xhat[off + j] * sum_dxh_xh));
    }
  }
  for (std::size_t i = 0; i < l.n; ++i) {
    const T* dzi = dz.data() + i * l.s;
    for (std::size_t j = 0; j < l.s; ++j) d_bias += dzi[j];
    for (std::size_t c = 0; c < l.c; ++c) {
      const T a = kernel[c], b = kernel[l.c + c];
      const std::size_t base = (i * l.c + c) * l.s;
      double da = 0.0, db = 0.0;
      for (std::size_t j = 0; j < l.s; ++j) {
        da += static_cast<double>(dzi[j]) * mean[base + j];
        db += static_cast<double>(dzi[j]) * f[base + j];
        d_mean[base + j] += a * dzi[j];
        d_f[base + j] += b * dzi[j];
      }
      d_kernel[c] += static_cast<T>(da);
      d_kernel[l.c + c] += static_cast<T>(db);
    }
  }
}

}  // namespace

template <typename T>
FusionBlockParams<T> FusionBlockParams<T>::zeros(std::size_t channels) {
  FusionBlockParams p;
  p.channels = channels;
  p.conv_x.assign(2 * channels, T{0});
  p.conv_e.assign(2 * channels, T{0});
  return p;
}

template <typename T>
void FusionBlockParams<T>::validate() const {
  if (channels == 0) throw std::invalid_argument("fusion params: channel count must be >= 1");
  if (conv_x.size() != 2 * channels || conv_e.size() != 2 * channels) {
    throw std::invalid_argument("fusion params: 1x1x1 kernels must have 2C = " +
                                std::to_string(2 * channels) + " input weights");
  }
}

template <typename T>
void StageFeatures<T>::validate() const {
  layout_of(f_x);
  if (f_x.shape() != f_e.shape()) {
    throw std::invalid_argument("fusion: modality feature shapes differ: " + shape_string(f_x.shape()) +
                                " vs " + shape_string(f_e.shape()));
  }
}

template <typename T>
WeightMaps<T> compute_raw_weights(const StageFeatures<T>& feats, const FusionBlockParams<T>& params,
                                  AsfCache<T>* cache) {
  feats.validate();
  params.validate();
  if (feats.f_x.dim(1) != params.channels) {
    throw std::invalid_argument("fusion: features have " + std::to_string(feats.f_x.dim(1)) +
                                " channels, params expect " + std::to_string(params.channels));
  }
  const Tensor<T> m = modality_mean(feats);
  WeightMaps<T> w;
  w.x = attention_map(m, feats.f_x, params.conv_x, params.bias_x, params.instance_norm, params.in_x_scale,
                      params.in_x_shift, cache ? &cache->xhat_x : nullptr, cache ? &cache->inv_std_x : nullptr);
  w.e = attention_map(m, feats.f_e, params.conv_e, params.bias_e, params.instance_norm, params.in_e_scale,
                      params.in_e_shift, cache ? &cache->xhat_e : nullptr, cache ? &cache->inv_std_e : nullptr);
  return w;
}

template <typename T>
WeightMaps<T> normalize_weights(const WeightMaps<T>& raw) {
  require_same_shape(raw.x, raw.e, "normalize_weights");
  WeightMaps<T> out{Tensor<T>(raw.x.shape()), Tensor<T>(raw.e.shape())};
  for (std::size_t k = 0; k < raw.x.size(); ++k) {
    const T top = std::max(raw.x[k], raw.e[k]);
    const T ex = std::exp(raw.x[k] - top);
    const T ee = std::exp(raw.e[k] - top);
    out.x[k] = ex / (ex + ee);
    out.e[k] = T{1} - out.x[k];
  }
  return out;
}

template <typename T>
Tensor<T> fuse(const StageFeatures<T>& feats, const WeightMaps<T>& normalized) {
  feats.validate();
  const Layout l = layout_of(feats.f_x);
  const Shape expected = map_shape(feats.f_x);
  if (normalized.x.shape() != expected || normalized.e.shape() != expected) {
    throw std::invalid_argument("fuse: weight maps must be " + shape_string(expected));
  }
  Tensor<T> fused(feats.f_x.shape());
  for (std::size_t i = 0; i < l.n; ++i) {
    const T* wx = normalized.x.data() + i * l.s;
    const T* we = normalized.e.data() + i * l.s;
    for (std::size_t c = 0; c < l.c; ++c) {
      const std::size_t base = (i * l.c + c) * l.s;
      for (std::size_t j = 0; j < l.s; ++j) {
        fused[base + j] = wx[j] * feats.f_x[base + j] + we[j] * feats.f_e[base + j];
      }
    }
  }
  return fused;
}

template <typename T>
AsfOutput<T> asf_forward(const StageFeatures<T>& feats, const FusionBlockParams<T>& params, AsfCache<T>* cache) {
  WeightMaps<T> raw = compute_raw_weights(feats, params, cache);
  WeightMaps<T> norm = normalize_weights(raw);
  AsfOutput<T> out;
  out.fused = fuse(feats, norm);
  out.branch_x = feats.f_x;
  out.branch_e = feats.f_e;
  for (std::size_t k = 0; k < out.fused.size(); ++k) {
    out.branch_x[k] += out.fused[k];
    out.branch_e[k] += out.fused[k];
  }
  if (cache) {
    cache->raw = std::move(raw);
    cache->normalized = std::move(norm);
  }
  return out;
}

template <typename T>
AsfGradients<T> asf_backward(const StageFeatures<T>& feats, const FusionBlockParams<T>& params,
                             const AsfCache<T>& cache, const Nullable<T>* d_fused, const Nullable<T>* d_branch_x,
                             const Nullable<T>* d_branch_e) {
  const Layout l = layout_of(feats.f_x);
  AsfGradients<T> g;
  g.d_params = FusionBlockParams<T>::zeros(params.channels);
  g.d_params.in_x_scale = g.d_params.in_e_scale = T{0};
  g.d_params.instance_norm = params.instance_norm;
  g.d_fused = Tensor<T>(feats.f_x.shape());
  for (const Tensor<T>* d : {d_fused, d_branch_x, d_branch_e}) {
    if (!d) continue;
    require_same_shape(*d, g.d_fused, "asf_backward");
    for (std::size_t k = 0; k < d->size(); ++k) g.d_fused[k] += (*d)[k];
  }
  g.d_f_x = d_branch_x ? *d_branch_x : Tensor<T>(feats.f_x.shape());
  g.d_f_e = d_branch_e ? *d_branch_e : Tensor<T>(feats.f_e.shape());

  // Through the convex combination; d_hat is the gradient on ŵ_x (ŵ_e = 1 - ŵ_x).
  Tensor<T> dwx(cache.normalized.x.shape());
  Tensor<T> dwe(cache.normalized.x.shape());
  for (std::size_t i = 0; i < l.n; ++i) {
    for (std::size_t j = 0; j < l.s; ++j) {
      const std::size_t v = i * l.s + j;
      const T hx = cache.normalized.x[v], he = cache.normalized.e[v];
      double d_hat = 0.0;
      for (std::size_t c = 0; c < l.c; ++c) {
        const std::size_t k = (i * l.c + c) * l.s + j;
        const T gf = g.d_fused[k];
        g.d_f_x[k] += hx * gf;
        g.d_f_e[k] += he * gf;
        d_hat += static_cast<double>(gf) * (feats.f_x[k] - feats.f_e[k]);
      }
      // Softmax of two logits: dŵ_x/dw_x = ŵ_x ŵ_e = -dŵ_x/dw_e.
      const T d_logit = static_cast<T>(d_hat) * hx * he;
      dwx[v] = d_logit;
      dwe[v] = -d_logit;
    }
  }
  const Tensor<T> m = modality_mean(feats);
  Tensor<T> d_mean(feats.f_x.shape());
  attention_backward(dwx, cache.raw.x, m, feats.f_x, params.conv_x, params.instance_norm, params.in_x_scale,
                     cache.xhat_x, cache.inv_std_x, g.d_params.conv_x, g.d_params.bias_x, g.d_params.in_x_scale,
                     g.d_params.in_x_shift, d_mean, g.d_f_x);
  attention_backward(dwe, cache.raw.e, m, feats.f_e, params.conv_e, params.instance_norm, params.in_e_scale,
                     cache.xhat_e, cache.inv_std_e, g.d_params.conv_e, g.d_params.bias_e, g.d_params.in_e_scale,
                     g.d_params.in_e_shift, d_mean, g.d_f_e);
  for (std::size_t k = 0; k < d_mean.size(); ++k) {
    const T half = d_mean[k] / T{2};
    g.d_f_x[k] += half;
    g.d_f_e[k] += half;
  }
  return g;
}

#define TRUS_INSTANTIATE_FUSION(T)                                                                       \
  template struct FusionBlockParams<T>;                                                                  \
  template struct StageFeatures<T>;                                                                      \
  template WeightMaps<T> compute_raw_weights(const StageFeatures<T>&, const FusionBlockParams<T>&,       \
                                             AsfCache<T>*);                                              \
  template WeightMaps<T> normalize_weights(const WeightMaps<T>&);                                        \
  template Tensor<T> fuse(const StageFeatures<T>&, const WeightMaps<T>&);                                \
  template AsfOutput<T> asf_forward(const StageFeatures<T>&, const FusionBlockParams<T>&, AsfCache<T>*); \
  template AsfGradients<T> asf_backward(const StageFeatures<T>&, const FusionBlockParams<T>&,            \
                                        const AsfCache<T>&, const Tensor<T>*, const Tensor<T>*,          \
                                        const Tensor<T>*);

TRUS_INSTANTIATE_FUSION(float)
TRUS_INSTANTIATE_FUSION(double)

}  // namespace trus::fusion
