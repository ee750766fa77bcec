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

#include <filesystem>
#include <vector>

#include "json.hpp"
#include "trus/network.hpp"

namespace trus::ckpt {

// File layout:
//   8 bytes  magic "TRUSCK1\n"
//   u64      header length (little-endian)
//   header   JSON: config, digest, parameter table, epoch, has_momentum, extra,
//            payload byte count and FNV-1a digest
//   payload  one TRUS1 container per parameter, then one per momentum buffer

struct Checkpoint {
  net::Model<float> model;
  /// Number of completed epochs.
  int epoch = 0;
  /// SGD momentum buffers, parallel to model.parameters(); empty when not saved.
  std::vector<Tensor<float>> momentum;
  nlohmann::json extra;
};

void save_checkpoint(const std::filesystem::path& path, const net::Model<float>& model, int epoch,
                     const std::vector<Tensor<float>>* momentum = nullptr,
                     const nlohmann::json& extra = nlohmann::json::object());

/// Throws DataError when the file is unreadable, inconsistent, or holds non-finite values.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trus::ckpt
