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

#include "trus/run_config.hpp"

#include <fstream>

#include "trus/error.hpp"

namespace trus::config {

using nlohmann::json;

namespace {

template <typename F>
void for_each_key(const json& doc, const std::string& section, F&& handle) {
  if (!doc.is_object()) throw UsageError(section + ": expected an object");
  for (const auto& [key, value] : doc.items()) {
    try {
      if (!handle(key, value)) throw UsageError(section + ": unknown key '" + key + "'");
    } catch (const json::exception& e) {
      throw UsageError(section + "." + key + ": " + e.what());
    }
  }
}

}  // namespace

net::NetworkConfig RunConfigDocument::resolved_network() const {
  net::NetworkConfig n = network;
  if (!network_channels_explicit) n.in_channels = phantom.dims[3];
  return net::apply_variant(n, variant);
}

train::TrainConfig RunConfigDocument::resolved_training() const {
  train::TrainConfig t = training;
  if (variant != net::Variant::fusion_or) t.lambda = 0.0;
  return t;
}

void RunConfigDocument::validate() const {
  try {
    phantom.validate();
    resolved_network().validate();
    resolved_training().validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!(evaluation.threshold >= 0.0 && evaluation.threshold <= 1.0)) {
    throw UsageError("evaluation.threshold must be in [0, 1]");
  }
  if (!(evaluation.test_fraction > 0.0 && evaluation.test_fraction < 1.0)) {
    throw UsageError("evaluation.test_fraction must be in (0, 1)");
  }
  if (cam.target_class != 0 && cam.target_class != 1) throw UsageError("cam.target_class must be 0 or 1");
  if (!(cam.alpha >= 0.0 && cam.alpha <= 1.0)) throw UsageError("cam.alpha must be in [0, 1]");
  if (!(cam.radius_fraction >= 0.0)) throw UsageError("cam.radius_fraction must be >= 0");
}

json to_json(const phantom::PhantomConfig& c) {
  return json{{"n_samples", c.n_samples},
              {"positive_fraction", c.positive_fraction},
              {"dims", c.dims},
              {"speckle_scale", c.speckle_scale},
              {"bmode_contrast", c.bmode_contrast},
              {"swe_stiffness_gain", c.swe_stiffness_gain},
              {"lesion_radius_range", c.lesion_radius_range},
              {"distractor_rate", c.distractor_rate},
              {"master_seed", c.master_seed}};
}

phantom::PhantomConfig phantom_config_from_json(const json& doc) {
  phantom::PhantomConfig c;
  for_each_key(doc, "phantom", [&](const std::string& key, const json& v) {
    if (key == "n_samples") c.n_samples = v.get<std::size_t>();
    else if (key == "positive_fraction") c.positive_fraction = v.get<double>();
    else if (key == "dims") c.dims = v.get<std::array<std::size_t, 4>>();
    else if (key == "speckle_scale") c.speckle_scale = v.get<double>();
    else if (key == "bmode_contrast") c.bmode_contrast = v.get<double>();
    else if (key == "swe_stiffness_gain") c.swe_stiffness_gain = v.get<double>();
    else if (key == "lesion_radius_range") c.lesion_radius_range = v.get<std::array<double, 2>>();
    else if (key == "distractor_rate") c.distractor_rate = v.get<double>();
    else if (key == "master_seed") c.master_seed = v.get<std::uint64_t>();
    else return false;
    return true;
  });
  return c;
}

RunConfigDocument parse_run_config(const json& doc) {
  RunConfigDocument rc;
  for_each_key(doc, "config", [&](const std::string& key, const json& v) {
    if (key == "phantom") {
      rc.phantom = phantom_config_from_json(v);
    } else if (key == "network") {
      if (!v.is_object()) throw UsageError("network: expected an object");
      rc.network = net::network_config_from_json(v);
      rc.network_channels_explicit = v.contains("in_channels");
    } else if (key == "training") {
      if (!v.is_object()) throw UsageError("training: expected an object");
      rc.training = train::train_config_from_json(v);
    } else if (key == "evaluation") {
      for_each_key(v, "evaluation", [&](const std::string& k, const json& x) {
        if (k == "threshold") rc.evaluation.threshold = x.get<double>();
        else if (k == "test_fraction") rc.evaluation.test_fraction = x.get<double>();
        else if (k == "split_seed") rc.evaluation.split_seed = x.get<std::uint64_t>();
        else return false;
        return true;
      });
    } else if (key == "cam") {
      for_each_key(v, "cam", [&](const std::string& k, const json& x) {
        if (k == "layer") rc.cam.layer = x.get<std::string>();
        else if (k == "target_class") rc.cam.target_class = x.get<int>();
        else if (k == "alpha") rc.cam.alpha = x.get<double>();
        else if (k == "radius_fraction") rc.cam.radius_fraction = x.get<double>();
        else return false;
        return true;
      });
    } else if (key == "variant") {
      rc.variant = net::variant_from_string(v.get<std::string>());
    } else {
      return false;
    }
    return true;
  });
  rc.validate();
  return rc;
}

RunConfigDocument load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
  return parse_run_config(doc);
}

json to_json(const RunConfigDocument& doc) {
  json network = net::to_json(doc.network);
  network["in_channels"] = doc.resolved_network().in_channels;
  return json{{"variant", net::to_string(doc.variant)},
              {"phantom", to_json(doc.phantom)},
              {"network", network},
              {"training", train::to_json(doc.training)},
              {"evaluation",
               {{"threshold", doc.evaluation.threshold},
                {"test_fraction", doc.evaluation.test_fraction},
                {"split_seed", doc.evaluation.split_seed}}},
              {"cam",
               {{"layer", doc.cam.layer},
                {"target_class", doc.cam.target_class},
                {"alpha", doc.cam.alpha},
                {"radius_fraction", doc.cam.radius_fraction}}}};
}

void persist_run_config(const RunConfigDocument& doc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.json");
  out << to_json(doc).dump(2) << "\n";
  if (!out) throw DataError("cannot write " + (dir / "config.json").string());
}

}  // namespace trus::config
