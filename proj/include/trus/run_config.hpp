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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "trus/network.hpp"
#include "trus/phantom.hpp"
#include "trus/trainer.hpp"

namespace trus::config {

struct EvaluationSection {
  double threshold = 0.5;
  double test_fraction = 0.25;
  std::uint64_t split_seed = 99;
};

struct CamSection {
  std::string layer = "stage4";
  int target_class = 1;
  double alpha = 0.5;
  double radius_fraction = 0.1;
};

/// Sections phantom, network, training, evaluation, cam plus `variant`. Every field is
/// optional; unknown keys are rejected.
struct RunConfigDocument {
  phantom::PhantomConfig phantom;
  net::NetworkConfig network;
  /// Unset means "take the channel count from phantom.dims".
  bool network_channels_explicit = false;
  train::TrainConfig training;
  EvaluationSection evaluation;
  CamSection cam;
  net::Variant variant = net::Variant::fusion_or;

  /// Network after applying the variant and the channel default.
  net::NetworkConfig resolved_network() const;
  /// Training config for the variant: every row except fusion_or trains with lambda 0.
  train::TrainConfig resolved_training() const;
  void validate() const;
};

nlohmann::json to_json(const phantom::PhantomConfig& c);
phantom::PhantomConfig phantom_config_from_json(const nlohmann::json& doc);

/// Throws UsageError on unknown keys or ill-typed values.
RunConfigDocument parse_run_config(const nlohmann::json& doc);
RunConfigDocument load_run_config(const std::filesystem::path& path);
/// Fully resolved document, defaults included.
nlohmann::json to_json(const RunConfigDocument& doc);
/// Writes the resolved document as `config.json` inside `dir`.
void persist_run_config(const RunConfigDocument& doc, const std::filesystem::path& dir);

}  // namespace trus::config
