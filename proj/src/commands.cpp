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

#include "trus/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "trus/cam.hpp"
#include "trus/checkpoint.hpp"
#include "trus/digest.hpp"
#include "trus/error.hpp"
#include "trus/phantom.hpp"
#include "trus/run_config.hpp"
#include "trus/trainer.hpp"

namespace trus::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int run_guarded(const std::function<void()>& body, std::ostream& err) {
  try {
    body();
    return kExitOk;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

std::optional<fs::path> default_data_root() {
  if (const char* env = std::getenv("TRUS_DATA_ROOT"); env && *env) return fs::path(env);
  return std::nullopt;
}

videodata::DatasetManifest rebase_manifest(const videodata::DatasetManifest& manifest, const fs::path& new_root) {
  videodata::DatasetManifest out = manifest;
  const fs::path base = fs::weakly_canonical(fs::absolute(new_root));
  auto rebase = [&](const std::string& p) {
    return fs::weakly_canonical(fs::absolute(manifest.root / p)).lexically_relative(base).generic_string();
  };
  for (auto& e : out.entries) {
    e.bmode_path = rebase(e.bmode_path);
    e.swe_path = rebase(e.swe_path);
    if (e.mask_path) e.mask_path = rebase(*e.mask_path);
  }
  out.root = new_root;
  return out;
}

namespace {

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << "\n";
  if (!out) throw DataError("cannot write " + path.string());
}

videodata::DatasetManifest read_data_manifest(const fs::path& data_dir) {
  const fs::path path = fs::is_directory(data_dir) ? data_dir / "manifest.json" : data_dir;
  return videodata::read_manifest(path);
}

std::pair<videodata::DatasetManifest, videodata::DatasetManifest> write_splits(
    const config::RunConfigDocument& rc, const videodata::DatasetManifest& all, const fs::path& out_dir) {
  auto [tr, te] = videodata::split_manifest(all, rc.evaluation.test_fraction, rc.evaluation.split_seed);
  tr = rebase_manifest(tr, out_dir);
  te = rebase_manifest(te, out_dir);
  videodata::write_manifest(tr, out_dir / "train_manifest.json");
  videodata::write_manifest(te, out_dir / "test_manifest.json");
  return {tr, te};
}

train::TrainResult train_variant(const config::RunConfigDocument& rc, const videodata::DatasetManifest& train_set,
                                 const fs::path& out_dir, const std::optional<fs::path>& resume, std::ostream& log) {
  train::TrainOptions opts;
  opts.resume = resume;
  const int epochs = rc.training.epochs;
  opts.on_epoch = [&log, epochs](const train::EpochRecord& r) {
    log << "epoch " << r.epoch + 1 << "/" << epochs << "  lr " << r.lr << "  loss " << r.loss << "  ce " << r.ce
        << "  penalty " << r.penalty << "  " << std::fixed << std::setprecision(1) << r.seconds << "s"
        << std::defaultfloat << std::setprecision(6) << std::endl;
  };
  return train::train(rc.resolved_network(), rc.resolved_training(), train_set, out_dir, opts);
}

}  // namespace

fs::path gen_data(const fs::path& config_path, const fs::path& out_dir, std::ostream& log) {
  const config::RunConfigDocument rc = config::load_run_config(config_path);
  try {
    fs::create_directories(out_dir);
  } catch (const fs::filesystem_error& e) {
    throw DataError("cannot create output directory " + out_dir.string() + ": " + e.code().message());
  }
  const auto manifest = phantom::generate_dataset(rc.phantom, out_dir);
  config::persist_run_config(rc, out_dir);
  const fs::path path = out_dir / "manifest.json";
  log << "wrote " << manifest.entries.size() << " samples (" << manifest.count(1) << " positive) to "
      << path.string() << "\n";
  return path;
}

fs::path train_run(const fs::path& config_path, const fs::path& data_dir, const fs::path& out_dir,
                   const TrainOverrides& overrides, std::ostream& log) {
  json doc;
  {
    config::RunConfigDocument base = config::load_run_config(config_path);
    doc = config::to_json(base);
  }
  if (overrides.epochs) doc["training"]["epochs"] = *overrides.epochs;
  if (overrides.variant) doc["variant"] = *overrides.variant;
  const config::RunConfigDocument rc = config::parse_run_config(doc);
  fs::create_directories(out_dir);
  config::persist_run_config(rc, out_dir);
  const auto [tr, te] = write_splits(rc, read_data_manifest(data_dir), out_dir);
  log << "training " << net::to_string(rc.variant) << " on " << tr.entries.size() << " samples ("
      << te.entries.size() << " held out)\n";
  const auto result = train_variant(rc, tr, out_dir, overrides.resume, log);
  log << "checkpoint " << result.checkpoint.string() << "\n";
  return result.checkpoint;
}

metrics::EvalReport eval_run(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out_dir,
                             double threshold, std::ostream& log) {
  const ckpt::Checkpoint ck = ckpt::load_checkpoint(checkpoint);
  const auto manifest = read_data_manifest(manifest_path);
  const auto report = metrics::evaluate(ck.model, manifest, threshold);
  metrics::write_report(report, out_dir);
  write_json(out_dir / "eval_inputs.json", {{"checkpoint", checkpoint.string()},
                                            {"checkpoint_digest", digest_file(checkpoint)},
                                            {"manifest", manifest_path.string()},
                                            {"threshold", threshold}});
  log << "auc " << report.auc << "  f1 " << report.f1 << (report.f1_undefined ? " (undefined)" : "") << "  acc "
      << report.accuracy << "\n";
  return report;
}

int ablate_run(const fs::path& config_path, const fs::path& data_dir, const fs::path& out_dir, std::ostream& log) {
  const config::RunConfigDocument base = config::load_run_config(config_path);
  fs::create_directories(out_dir);
  config::persist_run_config(base, out_dir);
  const auto [tr, te] = write_splits(base, read_data_manifest(data_dir), out_dir);

  json rows = json::array();
  int failures = 0;
  for (net::Variant v : net::all_variants()) {
    const std::string name = net::to_string(v);
    config::RunConfigDocument rc = base;
    rc.variant = v;
    const fs::path dir = out_dir / name;
    json row{{"variant", name}};
    log << "== " << name << "\n";
    const int code = run_guarded(
        [&] {
          rc.validate();
          fs::create_directories(dir);
          config::persist_run_config(rc, dir);
          const auto result = train_variant(rc, tr, dir, std::nullopt, log);
          const auto report = metrics::evaluate(result.model, te, rc.evaluation.threshold);
          metrics::write_report(report, dir);
          row["auc"] = report.auc;
          row["f1"] = report.f1;
          row["accuracy"] = report.accuracy;
        },
        log);
    if (code != kExitOk) {
      ++failures;
      row["error_exit_code"] = code;
    }
    rows.push_back(row);
  }

  json best;
  for (const char* col : {"auc", "f1", "accuracy"}) {
    double top = -1;
    for (const auto& r : rows) {
      if (r.contains(col)) top = std::max(top, r[col].get<double>());
    }
    best[col] = top;
  }
  write_json(out_dir / "table.json", {{"rows", rows}, {"best", best}});

  std::ofstream md(out_dir / "table.md");
  md << "| variant | AUC | F1 | Acc |\n|---|---|---|---|\n";
  md << std::fixed << std::setprecision(3);
  for (const auto& r : rows) {
    md << "| " << r["variant"].get<std::string>();
    for (const char* col : {"auc", "f1", "accuracy"}) {
      if (!r.contains(col)) {
        md << " | failed";
        continue;
      }
      const double v = r[col].get<double>();
      md << " | " << (v == best[col].get<double>() ? "**" : "") << v << (v == best[col].get<double>() ? "**" : "");
    }
    md << " |\n";
  }
  if (!md) throw DataError("cannot write " + (out_dir / "table.md").string());
  return failures;
}

void cam_run(const CamRequest& req, std::ostream& log) {
  const ckpt::Checkpoint ck = ckpt::load_checkpoint(req.checkpoint);
  config::CamSection defaults;
  const std::string layer = req.layer.value_or(defaults.layer);
  cam::layer_index(layer);
  const int cls = req.target_class.value_or(defaults.target_class);
  const double alpha = req.alpha.value_or(defaults.alpha);
  const double radius = req.radius_fraction.value_or(defaults.radius_fraction);
  if (cls != 0 && cls != 1) throw UsageError("--class must be 0 or 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("--alpha must be in [0, 1]");

  videodata::TrusSample sample;
  if (fs::is_directory(req.sample)) {
    sample = videodata::load_sample(req.sample);
  } else {
    if (!req.manifest) throw UsageError("sample '" + req.sample + "' is not a directory; pass --manifest to look it up by id");
    const auto manifest = read_data_manifest(*req.manifest);
    sample = videodata::load_entry(manifest, manifest.find(req.sample));
  }

  const cam::HeatVolume heat = cam::grad_cam(ck.model, sample, layer, cls);
  fs::create_directories(req.out_dir);
  cam::write_frames(cam::overlay(sample, heat, alpha), req.out_dir / "frames");
  videodata::write_container(req.out_dir / "heat.trus", heat.upsampled);
  json out{{"sample", sample.id}, {"label", sample.label}, {"layer", layer}, {"target_class", cls},
           {"alpha", alpha},      {"frames", sample.frames()}};
  const bool has_lesion = sample.lesion_mask &&
                          std::any_of(sample.lesion_mask->begin(), sample.lesion_mask->end(), [](auto v) { return v != 0; });
  if (sample.lesion_mask && (sample.label == 1 || has_lesion)) {
    const auto loc = cam::localization_score(heat, *sample.lesion_mask, radius);
    out["localization"] = {{"hit", loc.hit},
                           {"peak", loc.peak},
                           {"distance", loc.distance},
                           {"radius", loc.radius}};
    log << "localization " << (loc.hit ? "hit" : "miss") << " (peak t=" << loc.peak[0] << " h=" << loc.peak[1]
        << " w=" << loc.peak[2] << ", distance " << loc.distance << ", radius " << loc.radius << ")\n";
  }
  write_json(req.out_dir / "cam.json", out);
  log << "wrote " << sample.frames() << " frames to " << (req.out_dir / "frames").string() << "\n";
}

}  // namespace trus::cli
