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

#include "trus/cam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "trus/error.hpp"

namespace trus::cam {

std::size_t layer_index(const std::string& layer) {
  const auto ids = net::Model<float>::layer_ids();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] == layer) return i;
  }
  std::string valid;
  for (const auto& id : ids) valid += (valid.empty() ? "" : ", ") + id;
  throw UsageError("unknown layer '" + layer + "' (valid: " + valid + ")");
}

Tensor<float> upsample_volume(const Tensor<float>& volume, const std::array<std::size_t, 3>& target) {
  if (volume.rank() != 3 || volume.empty()) throw std::invalid_argument("upsample_volume: need a non-empty (T,H,W) volume");
  const std::array<std::size_t, 3> src{volume.dim(0), volume.dim(1), volume.dim(2)};
  // Source coordinate of each target index along one axis: floor index and weight.
  auto axis = [](std::size_t n_src, std::size_t n_dst) {
    std::vector<std::pair<std::size_t, double>> map(n_dst);
    const double scale = static_cast<double>(n_src) / n_dst;
    for (std::size_t i = 0; i < n_dst; ++i) {
      const double x = std::clamp((i + 0.5) * scale - 0.5, 0.0, static_cast<double>(n_src - 1));
      const auto lo = std::min(static_cast<std::size_t>(x), n_src - 1);
      map[i] = {lo, x - lo};
    }
    return map;
  };
  const auto mt = axis(src[0], target[0]), mh = axis(src[1], target[1]), mw = axis(src[2], target[2]);
  auto at = [&](std::size_t t, std::size_t h, std::size_t w) {
    return static_cast<double>(volume[(t * src[1] + h) * src[2] + w]);
  };
  Tensor<float> out({target[0], target[1], target[2]});
  for (std::size_t t = 0; t < target[0]; ++t) {
    const auto [t0, ft] = mt[t];
    const std::size_t t1 = std::min(t0 + 1, src[0] - 1);
    for (std::size_t h = 0; h < target[1]; ++h) {
      const auto [h0, fh] = mh[h];
      const std::size_t h1 = std::min(h0 + 1, src[1] - 1);
      for (std::size_t w = 0; w < target[2]; ++w) {
        const auto [w0, fw] = mw[w];
        const std::size_t w1 = std::min(w0 + 1, src[2] - 1);
        auto plane = [&](std::size_t tt) {
          const double a = at(tt, h0, w0) * (1 - fw) + at(tt, h0, w1) * fw;
          const double b = at(tt, h1, w0) * (1 - fw) + at(tt, h1, w1) * fw;
          return a * (1 - fh) + b * fh;
        };
        out[(t * target[1] + h) * target[2] + w] = static_cast<float>(plane(t0) * (1 - ft) + plane(t1) * ft);
      }
    }
  }
  return out;
}

HeatVolume grad_cam_from(const Tensor<float>& activation, const Tensor<float>& gradient,
                         const std::array<std::size_t, 3>& input_dims, std::string layer, int target_class) {
  require_same_shape(activation, gradient, "grad_cam activation/gradient");
  if (activation.rank() != 5 || activation.dim(0) != 1) {
    throw std::invalid_argument("grad_cam: activation must be (1, C, T, H, W), got " + shape_string(activation.shape()));
  }
  const std::size_t c = activation.dim(1);
  const std::size_t s = activation.size() / c;
  HeatVolume hv;
  hv.target_layer = std::move(layer);
  hv.target_class = target_class;
  std::vector<double> cam(s, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    double alpha = 0;
    for (std::size_t v = 0; v < s; ++v) alpha += gradient[k * s + v];
    alpha /= static_cast<double>(s);
    for (std::size_t v = 0; v < s; ++v) cam[v] += alpha * activation[k * s + v];
  }
  hv.values = Tensor<float>({activation.dim(2), activation.dim(3), activation.dim(4)});
  for (std::size_t v = 0; v < s; ++v) hv.values[v] = static_cast<float>(std::max(0.0, cam[v]));

  hv.upsampled = upsample_volume(hv.values, input_dims);
  const auto [lo, hi] = std::minmax_element(hv.upsampled.begin(), hv.upsampled.end());
  const double min = *lo, range = static_cast<double>(*hi) - min;
  for (float& v : hv.upsampled) v = range > 0 ? static_cast<float>((v - min) / range) : 0.0f;
  return hv;
}

HeatVolume grad_cam(const net::Model<float>& model, const videodata::TrusSample& sample, const std::string& layer,
                    int target_class) {
  const std::size_t stage = layer_index(layer);
  if (target_class != 0 && target_class != 1) throw UsageError("target class must be 0 or 1");
  const videodata::TrusSample* one[] = {&sample};
  const auto [xb, xe] = net::to_batch(one);
  net::Trace<float> trace;
  const auto fwd = model.forward(xb, xe, &trace);
  Tensor<float> dlogits({1, 2});
  dlogits[static_cast<std::size_t>(target_class)] = 1.0f;
  auto grads = model.zero_gradients();
  Tensor<float> probe;
  model.backward(trace, dlogits, grads, stage, &probe);
  return grad_cam_from(fwd.stage_map(stage), probe, {sample.frames(), sample.height(), sample.width()}, layer,
                       target_class);
}

std::array<double, 3> colormap(double h) {
  static constexpr std::array<std::array<double, 3>, 5> kStops{
      {{0, 0, 1}, {0, 1, 1}, {0, 1, 0}, {1, 1, 0}, {1, 0, 0}}};
  h = std::clamp(h, 0.0, 1.0);
  const double x = h * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(x), 3);
  const double f = x - static_cast<double>(i);
  std::array<double, 3> out{};
  for (std::size_t k = 0; k < 3; ++k) out[k] = kStops[i][k] * (1 - f) + kStops[i + 1][k] * f;
  return out;
}

std::vector<Frame> overlay(const videodata::TrusSample& sample, const HeatVolume& heat, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw std::invalid_argument("overlay: alpha must be in [0, 1]");
  const std::size_t t = sample.frames(), h = sample.height(), w = sample.width(), c = sample.channels();
  if (heat.upsampled.shape() != Shape{t, h, w}) {
    throw std::invalid_argument("overlay: heat " + shape_string(heat.upsampled.shape()) + " does not match sample " +
                                shape_string({t, h, w}));
  }
  auto to_byte = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
  std::vector<Frame> frames(t);
  for (std::size_t f = 0; f < t; ++f) {
    Frame& fr = frames[f];
    fr.height = h;
    fr.width = w;
    fr.rgb.resize(h * w * 3);
    for (std::size_t p = 0; p < h * w; ++p) {
      const double gray = sample.bmode[(f * h * w + p) * c];
      const double hv = heat.upsampled[f * h * w + p];
      const double a = alpha * hv;
      const auto cm = colormap(hv);
      for (std::size_t k = 0; k < 3; ++k) fr.rgb[p * 3 + k] = to_byte((1 - a) * gray + a * cm[k]);
    }
  }
  return frames;
}

void write_frames(const std::vector<Frame>& frames, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
    std::ofstream out(dir / name, std::ios::binary);
    out << "P6\n" << frames[i].width << " " << frames[i].height << "\n255\n";
    out.write(reinterpret_cast<const char*>(frames[i].rgb.data()), static_cast<std::streamsize>(frames[i].rgb.size()));
    if (!out) throw DataError("cannot write " + (dir / name).string());
  }
}

Localization localization_score(const HeatVolume& heat, const videodata::Mask& mask, double radius_fraction) {
  const Tensor<float>& u = heat.upsampled;
  if (u.rank() != 3 || mask.shape() != u.shape()) {
    throw std::invalid_argument("localization_score: mask " + shape_string(mask.shape()) + " does not match heat " +
                                shape_string(u.shape()));
  }
  if (!(radius_fraction >= 0.0)) throw std::invalid_argument("localization_score: radius must be >= 0");
  const std::size_t h = u.dim(1), w = u.dim(2);
  const std::size_t peak = static_cast<std::size_t>(std::max_element(u.begin(), u.end()) - u.begin());
  Localization loc;
  loc.peak = {peak / (h * w), (peak / w) % h, peak % w};
  loc.radius = radius_fraction * static_cast<double>(std::min(h, w));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double dt = static_cast<double>(i / (h * w)) - loc.peak[0];
    const double dh = static_cast<double>((i / w) % h) - loc.peak[1];
    const double dw = static_cast<double>(i % w) - loc.peak[2];
    best = std::min(best, std::sqrt(dt * dt + dh * dh + dw * dw));
  }
  if (std::isinf(best)) throw std::invalid_argument("localization_score: lesion mask is empty");
  loc.distance = best;
  loc.hit = u[peak] > 0.0f && best <= loc.radius;
  return loc;
}

}  // namespace trus::cam
