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
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "trus/network.hpp"
#include "trus/ortho_reg.hpp"
#include "trus/videodata.hpp"

namespace trus::train {

struct TrainSeeds {
  std::uint64_t init = 7;
  std::uint64_t shuffle = 11;
};

struct TrainConfig {
  int epochs = 300;
  double base_lr = 1e-4;
  /// Defaults to `epochs` when unset.
  std::optional<int> decay_horizon;
  double poly_power = 0.9;
  double momentum = 0.9;
  double lambda = 1e-5;
  ortho::PenaltyForm penalty_form = ortho::PenaltyForm::abs_deviation;
  TrainSeeds seeds;
  /// Save a checkpoint every this many epochs; 0 saves only the final one.
  int checkpoint_every = 0;

  int horizon() const { return decay_horizon.value_or(epochs); }
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& config);
/// Unknown keys raise UsageError.
TrainConfig train_config_from_json(const nlohmann::json& doc);

struct EpochRecord {
  int epoch = 0;
  double lr = 0;
  double loss = 0;
  double ce = 0;
  double penalty = 0;
  double seconds = 0;
};

struct RunHistory {
  std::vector<EpochRecord> records;
};

nlohmann::json to_json(const EpochRecord& r);
RunHistory read_history(const std::filesystem::path& path);

double poly_lr(int epoch, double base_lr, int decay_horizon, double power);

using IdPair = std::pair<std::string, std::string>;  // (positive, negative)

std::vector<IdPair> balanced_batches(const videodata::DatasetManifest& manifest, std::uint64_t shuffle_seed,
                                     int epoch);

/// Loss terms and gradients for one batch. The penalty is skipped (reported as 0)
/// when lambda is 0 and `force_penalty` is false.
struct StepResult {
  ortho::LossTerms<double> loss;
  net::Gradients<float> grads;
};

StepResult compute_step(const net::Model<float>& model, const videodata::TrusSample& positive,
                        const videodata::TrusSample& negative, const TrainConfig& config,
                        bool force_penalty = false);

/// Sum of R over every convolution kernel of the model.
double model_penalty(const net::Model<float>& model, ortho::PenaltyForm form);

struct TrainOptions {
  std::optional<std::filesystem::path> resume;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  net::Model<float> model;
  RunHistory history;
  std::filesystem::path checkpoint;
};

/// Writes history.jsonl, checkpoint_final.ckpt and periodic checkpoint_eNNNN.ckpt into out_dir.
TrainResult train(const net::NetworkConfig& net_config, const TrainConfig& config,
                  const videodata::DatasetManifest& train_manifest, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

}  // namespace trus::train
