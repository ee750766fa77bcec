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

#include "trus/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <initializer_list>
#include <numbers>
#include <stdexcept>
#include <string>

#include "trus/error.hpp"

namespace trus::phantom {

namespace fs = std::filesystem;
using videodata::TrusSample;
using videodata::Video;

namespace {

constexpr double kTissueLevel = 0.6;
constexpr double kStiffnessLevel = 0.3;
constexpr double kTaperHalfWidth = 1.0;
constexpr int kPlacementAttempts = 256;

double min_spatial(const PhantomConfig& c) { return static_cast<double>(std::min(c.dims[1], c.dims[2])); }

struct RadiusBounds {
  double t_lo, t_hi, s_lo, s_hi;
};

RadiusBounds radius_bounds(const PhantomConfig& c) {
  const double frames = static_cast<double>(c.dims[0]);
  return {0.25 * frames, 0.45 * (frames - 1.0), c.lesion_radius_range[0] * min_spatial(c),
          c.lesion_radius_range[1] * min_spatial(c)};
}

LesionSpec draw_lesion(const PhantomConfig& c, Rng& rng, LesionKind kind) {
  const RadiusBounds rb = radius_bounds(c);
  LesionSpec l;
  l.kind = kind;
  l.radii = {rng.uniform(rb.t_lo, rb.t_hi), rng.uniform(rb.s_lo, rb.s_hi), rng.uniform(rb.s_lo, rb.s_hi)};
  for (std::size_t a = 0; a < 3; ++a) {
    const double extent = static_cast<double>(c.dims[a]) - 1.0;
    l.center[a] = rng.uniform(l.radii[a], extent - l.radii[a]);
  }
  return l;
}

bool overlaps(const LesionSpec& a, const LesionSpec& b) {
  const double dh = a.center[1] - b.center[1];
  const double dw = a.center[2] - b.center[2];
  const double reach = std::max(a.radii[1], a.radii[2]) + std::max(b.radii[1], b.radii[2]) +
                       4.0 * kTaperHalfWidth;
  return dh * dh + dw * dw < reach * reach;
}

// Draws the whole set again on every attempt, so an unlucky first lesion cannot block the rest.
void place(const PhantomConfig& c, Rng& rng, std::initializer_list<LesionKind> kinds, std::vector<LesionSpec>& lesions) {
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    std::vector<LesionSpec> drawn;
    for (LesionKind kind : kinds) {
      LesionSpec candidate = draw_lesion(c, rng, kind);
      if (std::any_of(drawn.begin(), drawn.end(), [&](const LesionSpec& l) { return overlaps(l, candidate); })) break;
      drawn.push_back(candidate);
    }
    if (drawn.size() == kinds.size()) {
      lesions.insert(lesions.end(), drawn.begin(), drawn.end());
      return;
    }
  }
  throw std::invalid_argument("phantom: cannot place " + std::to_string(kinds.size()) +
                              " lesions without overlap; lesion_radius_range too large for dims");
}

double rho(const LesionSpec& l, double t, double h, double w) {
  const double a = (t - l.center[0]) / l.radii[0];
  const double b = (h - l.center[1]) / l.radii[1];
  const double g = (w - l.center[2]) / l.radii[2];
  return std::sqrt(a * a + b * b + g * g);
}

}  // namespace

void PhantomConfig::validate() const {
  auto fail = [](const std::string& rule) { throw std::invalid_argument("phantom config: " + rule); };
  if (n_samples < 1) fail("n_samples must be >= 1");
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0)) fail("positive_fraction must lie in (0,1)");
  if (dims[0] < 4 || dims[1] < 8 || dims[2] < 8 || dims[3] < 1) fail("dims must be >= (4, 8, 8, 1)");
  if (!(speckle_scale > 0.0)) fail("speckle_scale must be > 0");
  if (!(bmode_contrast > 0.0 && bmode_contrast < 1.0)) fail("bmode_contrast must lie in (0,1)");
  if (!(swe_stiffness_gain > 0.0)) fail("swe_stiffness_gain must be > 0");
  if (!(lesion_radius_range[0] > 0.0 && lesion_radius_range[0] <= lesion_radius_range[1])) {
    fail("lesion_radius_range must satisfy 0 < min <= max");
  }
  if (!(distractor_rate >= 0.0 && distractor_rate <= 1.0)) fail("distractor_rate must lie in [0,1]");
  const RadiusBounds rb = radius_bounds(*this);
  const double half_extent = (static_cast<double>(std::min(dims[1], dims[2])) - 1.0) / 2.0;
  if (rb.s_hi >= half_extent || rb.s_lo < 1.0) {
    fail("lesion_radius_range incompatible with dims (spatial radius must lie in [1, " +
         std::to_string(half_extent) + "))");
  }
}

std::string to_string(LesionKind kind) {
  switch (kind) {
    case LesionKind::true_lesion: return "true_lesion";
    case LesionKind::bmode_only_distractor: return "bmode_only_distractor";
    case LesionKind::swe_only_distractor: return "swe_only_distractor";
  }
  return "unknown";
}

double lesion_taper(const LesionSpec& lesion, double t, double h, double w) {
  const double scale = std::min(lesion.radii[1], lesion.radii[2]);
  const double e = (rho(lesion, t, h, w) - 1.0) * scale;
  if (e <= -kTaperHalfWidth) return 1.0;
  if (e >= kTaperHalfWidth) return 0.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * (e + kTaperHalfWidth) / (2.0 * kTaperHalfWidth)));
}

GeneratedSample generate_sample(const PhantomConfig& config, std::uint64_t sample_seed, int label,
                                const std::string& id) {
  config.validate();
  if (label != 0 && label != 1) throw std::invalid_argument("phantom: label must be 0 or 1");
  Rng rng(sample_seed);

  GeneratedSample out;
  if (label == 1) {
    place(config, rng, {LesionKind::true_lesion}, out.lesions);
  } else if (rng.uniform() < config.distractor_rate) {
    place(config, rng, {LesionKind::bmode_only_distractor, LesionKind::swe_only_distractor}, out.lesions);
  }

  const auto [T, H, W, C] = config.dims;
  Video bmode({T, H, W, C});
  Video swe({T, H, W, C});
  videodata::Mask mask({T, H, W});
  const double s = config.speckle_scale;
  const double rayleigh_mean = std::sqrt(std::numbers::pi / 2.0);
  auto speckle = [&] { return (1.0 - s) + s * rng.rayleigh(1.0) / rayleigh_mean; };

  std::size_t voxel = 0;
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w, ++voxel) {
        double dark = 0.0, stiff = 0.0;
        for (const LesionSpec& l : out.lesions) {
          const double k = lesion_taper(l, double(t), double(h), double(w));
          if (l.darkens_bmode()) dark = std::max(dark, k);
          if (l.stiffens_swe()) stiff = std::max(stiff, k);
          if (l.kind == LesionKind::true_lesion && rho(l, double(t), double(h), double(w)) <= 1.0) {
            mask[voxel] = 1;
          }
        }
        const double b = kTissueLevel * (1.0 - config.bmode_contrast * dark) * speckle();
        const double e = kStiffnessLevel * (1.0 + config.swe_stiffness_gain * stiff) * speckle();
        for (std::size_t c = 0; c < C; ++c) {
          bmode[voxel * C + c] = static_cast<float>(b);
          swe[voxel * C + c] = static_cast<float>(e);
        }
      }
    }
  }
  out.sample.id = id;
  out.sample.label = label;
  out.sample.bmode = videodata::normalize_intensities(bmode);
  out.sample.swe = videodata::normalize_intensities(swe);
  out.sample.lesion_mask = std::move(mask);
  return out;
}

std::size_t positive_count(const PhantomConfig& config) {
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(config.n_samples) * config.positive_fraction));
}

videodata::DatasetManifest generate_dataset(const PhantomConfig& config, const fs::path& out_dir) {
  config.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create directory " + out_dir.string() + ": " + ec.message());

  const std::size_t n = config.n_samples;
  std::vector<int> labels(n, 0);
  std::fill_n(labels.begin(), positive_count(config), 1);
  Rng label_rng(mix64(config.master_seed ^ 0x6c6162656c73ULL));
  label_rng.shuffle(std::span<int>(labels));

  videodata::DatasetManifest manifest;
  manifest.master_seed = config.master_seed;
  manifest.split_tag = videodata::SplitTag::all;
  manifest.root = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%04zu", i);
    const GeneratedSample g = generate_sample(config, derive_sample_seed(config.master_seed, i), labels[i], id);
    videodata::save_sample(g.sample, out_dir / id);
    manifest.entries.push_back({id, std::string(id) + "/bmode.trus", std::string(id) + "/swe.trus",
                                labels[i], std::string(id) + "/mask.trus"});
  }
  videodata::write_manifest(manifest, out_dir / "manifest.json");
  return manifest;
}

}  // namespace trus::phantom
