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

#include "trus/videodata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"
#include "trus/error.hpp"
#include "trus/rng.hpp"

namespace trus::videodata {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "container I/O assumes little-endian");

namespace {

std::string index_string(const Shape& shape, std::size_t flat) {
  std::vector<std::size_t> idx(shape.size());
  for (std::size_t a = shape.size(); a-- > 0;) {
    idx[a] = flat % shape[a];
    flat /= shape[a];
  }
  std::string out = "[";
  for (std::size_t a = 0; a < idx.size(); ++a) {
    if (a) out += ",";
    out += std::to_string(idx[a]);
  }
  return out + "]";
}

void require_video(const Video& v, const char* what) {
  if (v.rank() != 4) {
    throw std::invalid_argument(std::string(what) + ": expected a rank-4 (T,H,W,C) video, got " +
                                shape_string(v.shape()));
  }
}

}  // namespace

void TrusSample::validate() const {
  require_video(bmode, "sample bmode");
  require_same_shape(bmode, swe, "sample bmode/swe");
  if (label != 0 && label != 1) {
    throw std::invalid_argument("sample " + id + ": label must be 0 or 1");
  }
  if (lesion_mask) {
    const Shape expected{bmode.dim(0), bmode.dim(1), bmode.dim(2)};
    if (lesion_mask->shape() != expected) {
      throw std::invalid_argument("sample " + id + ": mask shape " +
                                  shape_string(lesion_mask->shape()) + " does not match video " +
                                  shape_string(expected));
    }
  }
}

Video normalize_intensities(const Video& raw) {
  if (raw.empty()) return raw;
  float lo = std::numeric_limits<float>::infinity();
  float hi = -lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const float v = raw[i];
    if (!std::isfinite(v)) {
      throw std::invalid_argument("normalize_intensities: non-finite value at index " +
                                  index_string(raw.shape(), i));
    }
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Video out(raw.shape());
  if (hi == lo) return out;
  const double range = static_cast<double>(hi) - lo;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    out[i] = static_cast<float>((static_cast<double>(raw[i]) - lo) / range);
  }
  return out;
}

Video resize_video(const Video& video, const std::array<std::size_t, 3>& target) {
  require_video(video, "resize_video");
  if (video.empty()) throw std::invalid_argument("resize_video: zero-size input");
  for (std::size_t d : target) {
    if (d == 0) throw std::invalid_argument("resize_video: target dims must be >= 1");
  }
  const std::size_t channels = video.dim(3);
  const std::array<std::size_t, 3> src{video.dim(0), video.dim(1), video.dim(2)};

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t n_src, std::size_t n_dst) {
    std::vector<Tap> out(n_dst);
    for (std::size_t i = 0; i < n_dst; ++i) {
      const double pos = n_dst == 1 ? 0.0
                                    : static_cast<double>(i) * static_cast<double>(n_src - 1) /
                                          static_cast<double>(n_dst - 1);
      const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), n_src - 1);
      const std::size_t hi = std::min(lo + 1, n_src - 1);
      out[i] = {lo, hi, pos - static_cast<double>(lo)};
    }
    return out;
  };
  const auto tt = taps(src[0], target[0]);
  const auto th = taps(src[1], target[1]);
  const auto tw = taps(src[2], target[2]);

  Video out({target[0], target[1], target[2], channels});
  auto at = [&](std::size_t t, std::size_t h, std::size_t w, std::size_t c) -> double {
    return video[((t * src[1] + h) * src[2] + w) * channels + c];
  };
  std::size_t k = 0;
  for (const Tap& a : tt) {
    for (const Tap& b : th) {
      for (const Tap& g : tw) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double v00 = at(a.lo, b.lo, g.lo, c) * (1 - g.frac) + at(a.lo, b.lo, g.hi, c) * g.frac;
          const double v01 = at(a.lo, b.hi, g.lo, c) * (1 - g.frac) + at(a.lo, b.hi, g.hi, c) * g.frac;
          const double v10 = at(a.hi, b.lo, g.lo, c) * (1 - g.frac) + at(a.hi, b.lo, g.hi, c) * g.frac;
          const double v11 = at(a.hi, b.hi, g.lo, c) * (1 - g.frac) + at(a.hi, b.hi, g.hi, c) * g.frac;
          const double v0 = v00 * (1 - b.frac) + v01 * b.frac;
          const double v1 = v10 * (1 - b.frac) + v11 * b.frac;
          out[k++] = static_cast<float>(v0 * (1 - a.frac) + v1 * a.frac);
        }
      }
    }
  }
  return out;
}

// --- container ---------------------------------------------------------------

namespace {

constexpr char kMagic[5] = {'T', 'R', 'U', 'S', '1'};

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::u8; }

template <typename T>
void encode(std::ostream& out, const Tensor<T>& tensor) {
  if (tensor.rank() < 1 || tensor.rank() > 4) {
    throw std::invalid_argument("container supports rank 1..4, got " +
                                shape_string(tensor.shape()));
  }
  if constexpr (std::is_same_v<T, float>) {
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      if (!std::isfinite(tensor[i])) {
        throw std::invalid_argument("container payload must be finite (index " +
                                    std::to_string(i) + ")");
      }
    }
  }
  std::uint32_t dims[4] = {1, 1, 1, 1};
  for (std::size_t a = 0; a < tensor.rank(); ++a) {
    if (tensor.dim(a) > std::numeric_limits<std::uint32_t>::max()) {
      throw std::invalid_argument("container dimension exceeds u32");
    }
    dims[a] = static_cast<std::uint32_t>(tensor.dim(a));
  }
  const auto rank = static_cast<std::uint8_t>(tensor.rank());
  const auto code = static_cast<std::uint8_t>(dtype_of<T>());
  out.write(kMagic, sizeof kMagic);
  out.write(reinterpret_cast<const char*>(&rank), 1);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  out.write(reinterpret_cast<const char*>(&code), 1);
  out.write(reinterpret_cast<const char*>(tensor.data()),
            static_cast<std::streamsize>(tensor.size() * sizeof(T)));
}

template <typename T>
Tensor<T> decode(std::istream& in, const std::string& source) {
  char header[kContainerHeaderBytes];
  in.read(header, sizeof header);
  const auto got = static_cast<std::size_t>(in.gcount());
  if (got >= 5 && std::memcmp(header, kMagic, 5) != 0) {
    throw ContainerError(ContainerFault::bad_magic, source + ": not a TRUS1 container (bad magic)");
  }
  if (got < sizeof header) {
    throw ContainerError(ContainerFault::truncated,
                         source + ": truncated header: expected " +
                             std::to_string(sizeof header) + " bytes, got " + std::to_string(got));
  }
  const auto rank = static_cast<std::uint8_t>(header[5]);
  std::uint32_t dims[4];
  std::memcpy(dims, header + 6, sizeof dims);
  const auto code = static_cast<std::uint8_t>(header[22]);
  if (rank < 1 || rank > 4) {
    throw ContainerError(ContainerFault::bad_header,
                         source + ": invalid rank " + std::to_string(rank));
  }
  Shape shape;
  for (std::size_t a = 0; a < 4; ++a) {
    if (a < rank) {
      shape.push_back(dims[a]);
    } else if (dims[a] != 1) {
      throw ContainerError(ContainerFault::bad_header,
                           source + ": unused dimension " + std::to_string(a) + " is " +
                               std::to_string(dims[a]) + ", expected 1");
    }
  }
  if (code != static_cast<std::uint8_t>(DType::f32) && code != static_cast<std::uint8_t>(DType::u8)) {
    throw ContainerError(ContainerFault::bad_header,
                         source + ": unknown dtype code " + std::to_string(code));
  }
  if (code != static_cast<std::uint8_t>(dtype_of<T>())) {
    throw ContainerError(ContainerFault::dtype_mismatch,
                         source + ": dtype code " + std::to_string(code) + ", expected " +
                             std::to_string(static_cast<int>(dtype_of<T>())));
  }
  Tensor<T> tensor(shape);
  const std::size_t expected = tensor.size() * sizeof(T);
  in.read(reinterpret_cast<char*>(tensor.data()), static_cast<std::streamsize>(expected));
  const auto payload = static_cast<std::size_t>(in.gcount());
  if (payload != expected) {
    throw ContainerError(ContainerFault::truncated,
                         source + ": truncated payload: expected " + std::to_string(expected) +
                             " bytes, got " + std::to_string(payload));
  }
  return tensor;
}

template <typename T>
void write_file(const fs::path& path, const Tensor<T>& tensor) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContainerError(ContainerFault::io, "cannot open for writing: " + path.string());
  encode(out, tensor);
  out.flush();
  if (!out) throw ContainerError(ContainerFault::io, "write failed: " + path.string());
}

template <typename T>
Tensor<T> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContainerError(ContainerFault::io, "cannot open: " + path.string());
  return decode<T>(in, path.string());
}

}  // namespace

void encode_container(std::ostream& out, const Tensor<float>& tensor) { encode(out, tensor); }
void encode_container(std::ostream& out, const Tensor<std::uint8_t>& tensor) { encode(out, tensor); }
Tensor<float> decode_f32(std::istream& in, const std::string& source) { return decode<float>(in, source); }
Tensor<std::uint8_t> decode_u8(std::istream& in, const std::string& source) {
  return decode<std::uint8_t>(in, source);
}

void write_container(const fs::path& path, const Tensor<float>& tensor) { write_file(path, tensor); }
void write_container(const fs::path& path, const Tensor<std::uint8_t>& tensor) {
  write_file(path, tensor);
}
Tensor<float> read_f32(const fs::path& path) { return read_file<float>(path); }
Tensor<std::uint8_t> read_u8(const fs::path& path) { return read_file<std::uint8_t>(path); }

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open: " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_sample(const TrusSample& sample, const fs::path& dir) {
  sample.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory " + dir.string() + ": " + ec.message());
  write_container(dir / "bmode.trus", sample.bmode);
  write_container(dir / "swe.trus", sample.swe);
  if (sample.lesion_mask) write_container(dir / "mask.trus", *sample.lesion_mask);
  json meta = {{"id", sample.id}, {"label", sample.label}, {"has_mask", sample.lesion_mask.has_value()}};
  write_text(dir / "sample.json", meta.dump(2) + "\n");
}

TrusSample load_sample(const fs::path& dir) {
  const json meta = read_json(dir / "sample.json");
  TrusSample s;
  try {
    s.id = meta.at("id").get<std::string>();
    s.label = meta.at("label").get<int>();
  } catch (const json::exception& e) {
    throw DataError((dir / "sample.json").string() + ": " + e.what());
  }
  s.bmode = read_f32(dir / "bmode.trus");
  s.swe = read_f32(dir / "swe.trus");
  if (meta.value("has_mask", false)) s.lesion_mask = read_u8(dir / "mask.trus");
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(dir.string() + ": " + e.what());
  }
  return s;
}

// --- manifests ---------------------------------------------------------------

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::train: return "train";
    case SplitTag::test: return "test";
    case SplitTag::all: return "all";
  }
  return "all";
}

SplitTag split_tag_from_string(const std::string& text) {
  if (text == "train") return SplitTag::train;
  if (text == "test") return SplitTag::test;
  if (text == "all") return SplitTag::all;
  throw DataError("unknown split tag '" + text + "'");
}

std::size_t DatasetManifest::count(int label) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [label](const ManifestEntry& e) { return e.label == label; }));
}

void DatasetManifest::validate() const {
  std::map<std::string, int> seen;
  for (const ManifestEntry& e : entries) {
    if (e.label != 0 && e.label != 1) throw DataError("manifest entry " + e.id + ": label must be 0 or 1");
    if (++seen[e.id] > 1) throw DataError("manifest: duplicate id " + e.id);
  }
}

const ManifestEntry& DatasetManifest::find(const std::string& id) const {
  for (const ManifestEntry& e : entries) {
    if (e.id == id) return e;
  }
  throw DataError("manifest has no sample with id '" + id + "'");
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
  manifest.validate();
  json entries = json::array();
  for (const ManifestEntry& e : manifest.entries) {
    json j = {{"id", e.id}, {"bmode_path", e.bmode_path}, {"swe_path", e.swe_path}, {"label", e.label}};
    if (e.mask_path) j["mask_path"] = *e.mask_path;
    entries.push_back(std::move(j));
  }
  json doc = {{"format", "trus-manifest-1"},
              {"master_seed", manifest.master_seed},
              {"split_tag", to_string(manifest.split_tag)},
              {"label_counts", {{"positive", manifest.count(1)}, {"negative", manifest.count(0)}}},
              {"entries", std::move(entries)}};
  write_text(path, doc.dump(2) + "\n");
}

DatasetManifest read_manifest(const fs::path& path) {
  const json doc = read_json(path);
  DatasetManifest m;
  m.root = path.parent_path();
  try {
    m.master_seed = doc.at("master_seed").get<std::uint64_t>();
    m.split_tag = split_tag_from_string(doc.at("split_tag").get<std::string>());
    for (const json& j : doc.at("entries")) {
      ManifestEntry e;
      e.id = j.at("id").get<std::string>();
      e.bmode_path = j.at("bmode_path").get<std::string>();
      e.swe_path = j.at("swe_path").get<std::string>();
      e.label = j.at("label").get<int>();
      if (j.contains("mask_path")) e.mask_path = j.at("mask_path").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  m.validate();
  if (doc.contains("label_counts")) {
    const auto& lc = doc["label_counts"];
    if (lc.value("positive", m.count(1)) != m.count(1) || lc.value("negative", m.count(0)) != m.count(0)) {
      throw DataError(path.string() + ": recorded label counts disagree with entries");
    }
  }
  return m;
}

TrusSample load_entry(const DatasetManifest& manifest, const ManifestEntry& entry) {
  TrusSample s;
  s.id = entry.id;
  s.label = entry.label;
  s.bmode = read_f32(manifest.root / entry.bmode_path);
  s.swe = read_f32(manifest.root / entry.swe_path);
  if (entry.mask_path) s.lesion_mask = read_u8(manifest.root / *entry.mask_path);
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError("sample " + entry.id + ": " + e.what());
  }
  return s;
}

std::pair<DatasetManifest, DatasetManifest> split_manifest(const DatasetManifest& manifest,
                                                           double test_fraction,
                                                           std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw std::invalid_argument("split_manifest: test_fraction must lie in (0, 1)");
  }
  manifest.validate();
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < manifest.entries.size(); ++i) {
    by_class[manifest.entries[i].label].push_back(i);
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].size() < 2) {
      throw DataError("split_manifest: class " + std::to_string(c) + " has " +
                      std::to_string(by_class[c].size()) +
                      " sample(s); stratification needs at least 2");
    }
  }
  const std::size_t n = manifest.entries.size();
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  auto clamp_class = [](long long k, std::size_t size) {
    return static_cast<std::size_t>(std::clamp<long long>(k, 1, static_cast<long long>(size) - 1));
  };
  const std::size_t pos_test =
      clamp_class(std::llround(test_fraction * static_cast<double>(by_class[1].size())), by_class[1].size());
  const std::size_t neg_test =
      clamp_class(static_cast<long long>(n_test) - static_cast<long long>(pos_test), by_class[0].size());
  const std::size_t take[2] = {neg_test, pos_test};

  std::vector<char> in_test(n, 0);
  for (int c = 0; c < 2; ++c) {
    Rng rng(mix64(seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(c + 1))));
    std::vector<std::size_t> order = by_class[c];
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t k = 0; k < take[c]; ++k) in_test[order[k]] = 1;
  }
  DatasetManifest train, test;
  for (DatasetManifest* m : {&train, &test}) {
    m->master_seed = manifest.master_seed;
    m->root = manifest.root;
  }
  train.split_tag = SplitTag::train;
  test.split_tag = SplitTag::test;
  for (std::size_t i = 0; i < n; ++i) {
    (in_test[i] ? test : train).entries.push_back(manifest.entries[i]);
  }
  return {std::move(train), std::move(test)};
}

}  // namespace trus::videodata
