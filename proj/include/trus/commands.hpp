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
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "trus/metrics.hpp"
#include "trus/videodata.hpp"

namespace trus::cli {

// Exit-code contract shared by every command.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

/// Runs `body`, prints a one-line diagnostic to `err` on failure and maps the
/// exception type onto the exit-code contract.
int run_guarded(const std::function<void()>& body, std::ostream& err);

/// Data root used when a command gets no explicit data directory (TRUS_DATA_ROOT).
std::optional<std::filesystem::path> default_data_root();

/// Copy of `manifest` whose entry paths resolve relative to `new_root`.
videodata::DatasetManifest rebase_manifest(const videodata::DatasetManifest& manifest,
                                           const std::filesystem::path& new_root);

struct TrainOverrides {
  std::optional<int> epochs;
  std::optional<std::string> variant;
  std::optional<std::filesystem::path> resume;
};

struct CamRequest {
  std::filesystem::path checkpoint;
  /// A sample directory, or an id looked up in `manifest`.
  std::string sample;
  std::optional<std::filesystem::path> manifest;
  std::filesystem::path out_dir;
  std::optional<std::string> layer;
  std::optional<int> target_class;
  std::optional<double> alpha;
  std::optional<double> radius_fraction;
};

// Throwing implementations; the CLI wraps them with run_guarded.
std::filesystem::path gen_data(const std::filesystem::path& config, const std::filesystem::path& out_dir,
                               std::ostream& log);
std::filesystem::path train_run(const std::filesystem::path& config, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir, const TrainOverrides& overrides,
                                std::ostream& log);
metrics::EvalReport eval_run(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                             const std::filesystem::path& out_dir, double threshold, std::ostream& log);
/// Returns the number of variants that failed.
int ablate_run(const std::filesystem::path& config, const std::filesystem::path& data_dir,
               const std::filesystem::path& out_dir, std::ostream& log);
void cam_run(const CamRequest& request, std::ostream& log);

}  // namespace trus::cli
