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

// trus: phantom generation, training, evaluation, ablation and Grad-CAM export.
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
// Command-line flags override the matching fields of the --config document.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "trus/commands.hpp"
#include "trus/error.hpp"

namespace fs = std::filesystem;
using namespace trus::cli;

int main(int argc, char** argv) {
  CLI::App app{"Dual-modality TRUS video classifier"};
  app.require_subcommand(1);

  std::string config, data, out, checkpoint, manifest, sample, layer, variant, resume;
  int epochs = 0, target_class = 1;
  double threshold = 0.5, alpha = 0.5, radius = 0.1;

  auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
  gen->add_option("--config", config, "run config document")->required();
  gen->add_option("--out", out, "output directory")->required();

  auto* tr = app.add_subcommand("train", "train one variant");
  tr->add_option("--config", config, "run config document")->required();
  tr->add_option("--data", data, "dataset directory or manifest (default: $TRUS_DATA_ROOT)");
  tr->add_option("--out", out, "output directory")->required();
  auto* tr_epochs = tr->add_option("--epochs", epochs, "override training.epochs");
  auto* tr_variant = tr->add_option("--variant", variant, "override variant");
  auto* tr_resume = tr->add_option("--resume", resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a manifest");
  ev->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  ev->add_option("--manifest", manifest, "manifest file or dataset directory")->required();
  ev->add_option("--out", out, "output directory")->required();
  ev->add_option("--threshold", threshold, "decision threshold")->capture_default_str();

  auto* ab = app.add_subcommand("ablate", "train and evaluate all five variants");
  ab->add_option("--config", config, "run config document")->required();
  ab->add_option("--data", data, "dataset directory or manifest (default: $TRUS_DATA_ROOT)");
  ab->add_option("--out", out, "output directory")->required();

  auto* cm = app.add_subcommand("cam", "Grad-CAM overlay for one sample");
  cm->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  cm->add_option("--sample", sample, "sample directory or id")->required();
  cm->add_option("--manifest", manifest, "manifest used to resolve a sample id");
  cm->add_option("--out", out, "output directory")->required();
  auto* cm_layer = cm->add_option("--layer", layer, "stage1..stage4");
  auto* cm_class = cm->add_option("--class", target_class, "target class (0 or 1)");
  auto* cm_alpha = cm->add_option("--alpha", alpha, "overlay opacity");
  auto* cm_radius = cm->add_option("--radius", radius, "localization radius as a fraction of min(H, W)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }

  auto data_dir = [&]() -> fs::path {
    if (!data.empty()) return data;
    if (auto root = default_data_root()) return *root;
    throw trus::UsageError("no --data given and TRUS_DATA_ROOT is unset");
  };

  return run_guarded(
      [&] {
        if (*gen) {
          gen_data(config, out, std::cout);
        } else if (*tr) {
          TrainOverrides o;
          if (*tr_epochs) o.epochs = epochs;
          if (*tr_variant) o.variant = variant;
          if (*tr_resume) o.resume = fs::path(resume);
          train_run(config, data_dir(), out, o, std::cout);
        } else if (*ev) {
          eval_run(checkpoint, manifest, out, threshold, std::cout);
        } else if (*ab) {
          const int failed = ablate_run(config, data_dir(), out, std::cout);
          if (failed > 0) throw trus::DataError(std::to_string(failed) + " variant(s) failed; see " + out);
        } else if (*cm) {
          CamRequest r;
          r.checkpoint = checkpoint;
          r.sample = sample;
          if (!manifest.empty()) r.manifest = fs::path(manifest);
          r.out_dir = out;
          if (*cm_layer) r.layer = layer;
          if (*cm_class) r.target_class = target_class;
          if (*cm_alpha) r.alpha = alpha;
          if (*cm_radius) r.radius_fraction = radius;
          cam_run(r, std::cout);
        }
      },
      std::cerr);
}
