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

#include "trus/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "trus/digest.hpp"
#include "trus/error.hpp"

namespace trus::ckpt {

using nlohmann::json;

namespace {

constexpr std::array<char, 8> kMagic{'T', 'R', 'U', 'S', 'C', 'K', '1', '\n'};

// Containers hold at most rank 4; kernels are flattened to (dim0, rest).
Tensor<float> flatten(const Tensor<float>& t) {
  if (t.rank() <= 2) return t;
  Tensor<float> out = t;
  out.reshape({t.dim(0), t.size() / t.dim(0)});
  return out;
}

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

Tensor<float> read_tensor(std::istream& in, const std::string& source, const Shape& shape) {
  Tensor<float> t = videodata::decode_f32(in, source);
  if (t.size() != shape_volume(shape)) {
    throw DataError(source + ": stored " + shape_string(t.shape()) + " does not fit " + shape_string(shape));
  }
  t.reshape(shape);
  for (float v : t) {
    if (!std::isfinite(v)) throw DataError(source + ": non-finite value");
  }
  return t;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const net::Model<float>& model, int epoch,
                     const std::vector<Tensor<float>>* momentum, const json& extra) {
  const auto& params = model.parameters();
  if (momentum && momentum->size() != params.size()) {
    throw std::invalid_argument("save_checkpoint: momentum buffers do not match parameters");
  }
  for (const auto& p : params) {
    if (!std::all_of(p.value.begin(), p.value.end(), [](float v) { return std::isfinite(v); })) {
      throw NumericError("save_checkpoint: parameter " + p.name + " holds non-finite values");
    }
  }
  json table = json::array();
  for (const auto& p : params) {
    table.push_back({{"name", p.name}, {"kind", net::to_string(p.kind)}, {"shape", p.value.shape()}});
  }
  std::ostringstream payload_stream;
  for (const auto& p : params) videodata::encode_container(payload_stream, flatten(p.value));
  if (momentum) {
    for (const auto& m : *momentum) videodata::encode_container(payload_stream, flatten(m));
  }
  const std::string payload = std::move(payload_stream).str();

  const json header{{"format", "trus-checkpoint-1"},
                    {"config", net::to_json(model.config())},
                    {"digest", model.digest()},
                    {"parameter_count", model.parameter_count()},
                    {"parameters", table},
                    {"epoch", epoch},
                    {"has_momentum", momentum != nullptr},
                    {"extra", extra},
                    {"payload_bytes", payload.size()},
                    {"payload_fnv1a", digest_text(payload)}};
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + path.string());
    out.write(kMagic.data(), kMagic.size());
    write_u64(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("short write on checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string source = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + source);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError(source + ": not a checkpoint file");
  const std::uint64_t length = read_u64(in);
  if (!in || length > (1u << 30)) throw DataError(source + ": corrupt header length");
  std::string text(length, '\0');
  in.read(text.data(), static_cast<std::streamsize>(length));
  if (!in) throw DataError(source + ": truncated header");

  json header;
  net::NetworkConfig config;
  try {
    header = json::parse(text);
    if (header.at("format") != "trus-checkpoint-1") throw DataError(source + ": unknown checkpoint format");
    config = net::network_config_from_json(header.at("config"));
    config.validate();
  } catch (const json::exception& e) {
    throw DataError(source + ": bad header: " + e.what());
  } catch (const UsageError& e) {
    throw DataError(source + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw DataError(source + ": " + e.what());
  }
  if (header.value("digest", "") != net::config_digest(config)) {
    throw DataError(source + ": config digest does not match the stored config");
  }

  const std::string payload{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (payload.size() != header.value("payload_bytes", std::uint64_t{0})) {
    throw DataError(source + ": payload is " + std::to_string(payload.size()) + " bytes, header says " +
                    std::to_string(header.value("payload_bytes", std::uint64_t{0})));
  }
  if (digest_text(payload) != header.value("payload_fnv1a", "")) {
    throw DataError(source + ": payload checksum mismatch");
  }
  std::istringstream body(payload);

  Checkpoint ck{net::Model<float>::build(config, 0), header.value("epoch", 0), {}, header.value("extra", json::object())};
  auto& params = ck.model.parameters();
  const json& table = header.at("parameters");
  if (table.size() != params.size()) {
    throw DataError(source + ": stores " + std::to_string(table.size()) + " parameters, config implies " +
                    std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const std::string name = table[i].at("name").get<std::string>();
    const Shape shape = table[i].at("shape").get<Shape>();
    if (name != params[i].name || shape != params[i].value.shape()) {
      throw DataError(source + ": parameter " + std::to_string(i) + " is " + name + shape_string(shape) +
                      ", expected " + params[i].name + shape_string(params[i].value.shape()));
    }
    params[i].value = read_tensor(body, source + ":" + name, shape);
  }
  if (header.value("has_momentum", false)) {
    for (const auto& p : params) ck.momentum.push_back(read_tensor(body, source + ":momentum:" + p.name, p.value.shape()));
  }
  return ck;
}

}  // namespace trus::ckpt
