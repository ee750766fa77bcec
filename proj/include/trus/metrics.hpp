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
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trus/network.hpp"
#include "trus/videodata.hpp"

namespace trus::metrics {

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  /// Scores >= threshold are called positive; +inf for the (0, 0) endpoint.
  double threshold = 0;
};

/// Tied scores flip together, so a tie contributes one diagonal segment.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

/// Trapezoidal area under roc_curve; equals the Mann-Whitney statistic with ties worth 1/2.
double auc(std::span<const double> scores, std::span<const int> labels);

struct F1Accuracy {
  double f1 = 0;
  double accuracy = 0;
  /// True when TP + FP + FN = 0 and F1 was set to 0 by convention.
  bool f1_undefined = false;
};

F1Accuracy f1_and_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct SampleScore {
  std::string id;
  double score = 0;
  int label = 0;
  int predicted = 0;
};

struct EvalReport {
  double auc = 0;
  double f1 = 0;
  double accuracy = 0;
  bool f1_undefined = false;
  double threshold = 0.5;
  std::vector<RocPoint> roc;
  std::vector<SampleScore> per_sample;  // sorted by id
};

/// Assembles a report from (id, score, label) rows; predictions are filled in.
EvalReport build_report(std::vector<SampleScore> rows, double threshold = 0.5);

EvalReport evaluate(const net::Model<float>& model, const videodata::DatasetManifest& manifest,
                    double threshold = 0.5);

nlohmann::json to_json(const EvalReport& report);
/// Writes report.json and roc.csv into `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace trus::metrics
