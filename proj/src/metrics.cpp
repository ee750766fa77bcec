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

#include "trus/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "trus/error.hpp"

namespace trus::metrics {

using nlohmann::json;

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw std::invalid_argument("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                                std::to_string(labels.size()) + ")");
  }
  if (scores.empty()) throw std::invalid_argument("empty score list");
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw std::invalid_argument("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw std::invalid_argument("score " + std::to_string(i) + " is not finite");
  }
}

}  // namespace

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0) throw std::invalid_argument("roc_curve: no positive samples");
  if (n_neg == 0) throw std::invalid_argument("roc_curve: no negative samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> pts{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == s; ++i) (labels[order[i]] == 1 ? tp : fp)++;
    pts.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, s});
  }
  return pts;
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  const auto pts = roc_curve(scores, labels);
  double area = 0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    area += (pts[i].fpr - pts[i - 1].fpr) * (pts[i].tpr + pts[i - 1].tpr) / 2;
  }
  return area;
}

F1Accuracy f1_and_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_inputs(scores, labels);
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw std::invalid_argument("threshold must be in [0, 1]");
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (pred && labels[i] == 1) ++tp;
    if (pred && labels[i] == 0) ++fp;
    if (!pred && labels[i] == 1) ++fn;
    if (!pred && labels[i] == 0) ++tn;
  }
  F1Accuracy r;
  const std::size_t denom = 2 * tp + fp + fn;
  r.f1_undefined = tp + fp + fn == 0;
  r.f1 = r.f1_undefined ? 0.0 : 2.0 * tp / denom;
  r.accuracy = static_cast<double>(tp + tn) / scores.size();
  return r;
}

EvalReport build_report(std::vector<SampleScore> rows, double threshold) {
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  std::vector<double> scores;
  std::vector<int> labels;
  for (auto& r : rows) {
    r.predicted = r.score >= threshold ? 1 : 0;
    scores.push_back(r.score);
    labels.push_back(r.label);
  }
  EvalReport rep;
  rep.threshold = threshold;
  rep.roc = roc_curve(scores, labels);
  rep.auc = auc(scores, labels);
  const F1Accuracy fa = f1_and_accuracy(scores, labels, threshold);
  rep.f1 = fa.f1;
  rep.accuracy = fa.accuracy;
  rep.f1_undefined = fa.f1_undefined;
  rep.per_sample = std::move(rows);
  return rep;
}

EvalReport evaluate(const net::Model<float>& model, const videodata::DatasetManifest& manifest, double threshold) {
  manifest.validate();
  std::vector<SampleScore> rows;
  for (const auto& e : manifest.entries) {
    videodata::TrusSample s;
    try {
      s = videodata::load_entry(manifest, e);
    } catch (const DataError& err) {
      throw DataError("sample " + e.id + ": " + err.what());
    }
    rows.push_back({e.id, net::predict_proba(model, s), e.label, 0});
  }
  return build_report(std::move(rows), threshold);
}

json to_json(const EvalReport& r) {
  json roc = json::array();
  for (const auto& p : r.roc) {
    roc.push_back({{"fpr", p.fpr}, {"tpr", p.tpr}, {"threshold", std::isinf(p.threshold) ? json("inf") : json(p.threshold)}});
  }
  json rows = json::array();
  for (const auto& s : r.per_sample) {
    rows.push_back({{"id", s.id}, {"score", s.score}, {"label", s.label}, {"predicted", s.predicted}});
  }
  return json{{"auc", r.auc},       {"f1", r.f1},   {"accuracy", r.accuracy}, {"f1_undefined", r.f1_undefined},
              {"threshold", r.threshold}, {"roc", roc}, {"per_sample", rows}};
}

void write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "report.json");
    out << to_json(report).dump(2) << "\n";
    if (!out) throw DataError("cannot write " + (dir / "report.json").string());
  }
  std::ofstream csv(dir / "roc.csv");
  csv << "fpr,tpr,threshold\n";
  csv.precision(17);
  for (const auto& p : report.roc) {
    csv << p.fpr << "," << p.tpr << ",";
    if (std::isinf(p.threshold)) {
      csv << "inf";
    } else {
      csv << p.threshold;
    }
    csv << "\n";
  }
  if (!csv) throw DataError("cannot write " + (dir / "roc.csv").string());
}

}  // namespace trus::metrics
