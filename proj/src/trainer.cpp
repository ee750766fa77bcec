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

#include "trus/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include "trus/checkpoint.hpp"
#include "trus/error.hpp"
#include "trus/rng.hpp"

namespace trus::train {

using nlohmann::json;
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  auto fail = [](const std::string& rule) { throw std::invalid_argument("train config: " + rule); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (!(base_lr > 0.0)) fail("base_lr must be > 0");
  if (!(lambda >= 0.0)) fail("lambda must be >= 0");
  if (horizon() <= 0) fail("decay_horizon must be > 0");
  if (!(poly_power >= 0.0)) fail("poly_power must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"base_lr", c.base_lr},
              {"decay_horizon", c.decay_horizon ? json(*c.decay_horizon) : json(nullptr)},
              {"poly_power", c.poly_power},
              {"momentum", c.momentum},
              {"lambda", c.lambda},
              {"penalty_form", ortho::to_string(c.penalty_form)},
              {"seeds", {{"init", c.seeds.init}, {"shuffle", c.seeds.shuffle}}},
              {"checkpoint_every", c.checkpoint_every}};
}

TrainConfig train_config_from_json(const json& doc) {
  TrainConfig c;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "epochs") {
        c.epochs = value.get<int>();
      } else if (key == "base_lr") {
        c.base_lr = value.get<double>();
      } else if (key == "decay_horizon") {
        if (value.is_null()) {
          c.decay_horizon.reset();
        } else {
          c.decay_horizon = value.get<int>();
        }
      } else if (key == "poly_power") {
        c.poly_power = value.get<double>();
      } else if (key == "momentum") {
        c.momentum = value.get<double>();
      } else if (key == "lambda") {
        c.lambda = value.get<double>();
      } else if (key == "penalty_form") {
        c.penalty_form = ortho::penalty_form_from_string(value.get<std::string>());
      } else if (key == "seeds") {
        for (const auto& [k, v] : value.items()) {
          if (k == "init") {
            c.seeds.init = v.get<std::uint64_t>();
          } else if (k == "shuffle") {
            c.seeds.shuffle = v.get<std::uint64_t>();
          } else {
            throw UsageError("training.seeds: unknown key '" + k + "'");
          }
        }
      } else if (key == "checkpoint_every") {
        c.checkpoint_every = value.get<int>();
      } else {
        throw UsageError("training: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("training: ") + e.what());
  }
  return c;
}

json to_json(const EpochRecord& r) {
  return json{{"epoch", r.epoch}, {"lr", r.lr},           {"loss", r.loss},
              {"ce", r.ce},       {"penalty", r.penalty}, {"seconds", r.seconds}};
}

RunHistory read_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open history " + path.string());
  RunHistory h;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      h.records.push_back({j.at("epoch").get<int>(), j.at("lr").get<double>(), j.at("loss").get<double>(),
                           j.at("ce").get<double>(), j.at("penalty").get<double>(), j.at("seconds").get<double>()});
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": bad history line: " + e.what());
    }
  }
  return h;
}

double poly_lr(int epoch, double base_lr, int decay_horizon, double power) {
  if (decay_horizon <= 0) throw std::invalid_argument("poly_lr: decay_horizon must be > 0");
  if (epoch < 0) throw std::invalid_argument("poly_lr: epoch must be >= 0");
  const double remaining = std::max(0.0, 1.0 - static_cast<double>(epoch) / decay_horizon);
  return base_lr * std::pow(remaining, power);
}

std::vector<IdPair> balanced_batches(const videodata::DatasetManifest& manifest, std::uint64_t shuffle_seed,
                                     int epoch) {
  std::vector<std::string> pos, neg;
  for (const auto& e : manifest.entries) (e.label == 1 ? pos : neg).push_back(e.id);
  if (pos.empty()) throw DataError("balanced_batches: no positive samples");
  if (neg.empty()) throw DataError("balanced_batches: no negative samples");
  const std::uint64_t base = shuffle_seed + static_cast<std::uint64_t>(epoch);
  Rng rng_pos(mix64(base));
  Rng rng_neg(mix64(base ^ 0x5bd1e995ULL));
  rng_pos.shuffle(std::span<std::string>(pos));
  rng_neg.shuffle(std::span<std::string>(neg));
  const std::size_t n = std::max(pos.size(), neg.size());
  std::vector<IdPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.emplace_back(pos[i % pos.size()], neg[i % neg.size()]);
  return out;
}

StepResult compute_step(const net::Model<float>& model, const videodata::TrusSample& positive,
                        const videodata::TrusSample& negative, const TrainConfig& config, bool force_penalty) {
  if (positive.label != 1 || negative.label != 0) {
    throw std::invalid_argument("compute_step: expects a (positive, negative) pair, got labels " +
                                std::to_string(positive.label) + " and " + std::to_string(negative.label));
  }
  const videodata::TrusSample* batch[] = {&positive, &negative};
  const int labels[] = {1, 0};
  const auto [xb, xe] = net::to_batch(batch);
  net::Trace<float> trace;
  const auto fwd = model.forward(xb, xe, &trace);

  const bool with_penalty = config.lambda > 0.0 || force_penalty;
  std::vector<Tensor<double>> kernels;
  std::vector<const Tensor<double>*> kernel_ptrs;
  const auto kernel_ids = model.kernel_set();
  if (with_penalty) {
    kernels.reserve(kernel_ids.size());
    for (std::size_t k : kernel_ids) kernels.push_back(model.parameters()[k].value.cast<double>());
    for (const auto& k : kernels) kernel_ptrs.push_back(&k);
  }
  Tensor<double> dlogits;
  std::vector<Tensor<double>> kernel_grads;
  const Tensor<double> logits = fwd.logits.cast<double>();
  StepResult r;
  r.loss = ortho::total_loss<double>(logits, labels, kernel_ptrs, config.lambda, config.penalty_form, &dlogits,
                                     config.lambda > 0.0 ? &kernel_grads : nullptr);
  r.grads = model.zero_gradients();
  model.backward(trace, dlogits.cast<float>(), r.grads);
  if (config.lambda > 0.0) {
    for (std::size_t i = 0; i < kernel_ids.size(); ++i) {
      Tensor<float>& g = r.grads[kernel_ids[i]];
      const Tensor<double>& kg = kernel_grads[i];
      for (std::size_t j = 0; j < g.size(); ++j) g[j] += static_cast<float>(kg[j]);
    }
  }
  return r;
}

double model_penalty(const net::Model<float>& model, ortho::PenaltyForm form) {
  double total = 0;
  for (std::size_t k : model.kernel_set()) {
    total += ortho::ortho_penalty<double>(model.parameters()[k].value.cast<double>(), form, nullptr);
  }
  return total;
}

namespace {

void write_failure(const fs::path& out_dir, int epoch, std::size_t step, const IdPair& pair,
                   const ortho::LossTerms<double>& loss) {
  std::ofstream out(out_dir / "failure.json");
  out << json{{"epoch", epoch},
              {"step", step},
              {"positive", pair.first},
              {"negative", pair.second},
              {"loss", std::isfinite(loss.total) ? json(loss.total) : json("non-finite")}}
             .dump(2)
      << "\n";
}

}  // namespace

TrainResult train(const net::NetworkConfig& net_config, const TrainConfig& config,
                  const videodata::DatasetManifest& train_manifest, const fs::path& out_dir,
                  const TrainOptions& options) {
  config.validate();
  net_config.validate();
  train_manifest.validate();
  fs::create_directories(out_dir);

  std::map<std::string, videodata::TrusSample> samples;
  for (const auto& e : train_manifest.entries) {
    videodata::TrusSample s = videodata::load_entry(train_manifest, e);
    if (s.channels() != net_config.in_channels) {
      throw DataError("sample " + e.id + " has " + std::to_string(s.channels()) + " channels, network expects " +
                      std::to_string(net_config.in_channels));
    }
    samples.emplace(e.id, std::move(s));
  }

  TrainResult result{net::Model<float>::build(net_config, config.seeds.init), {}, {}};
  net::Model<float>& model = result.model;
  std::vector<Tensor<float>> velocity;
  int start_epoch = 0;
  const fs::path history_path = out_dir / "history.jsonl";
  if (options.resume) {
    ckpt::Checkpoint ck = ckpt::load_checkpoint(*options.resume);
    if (ck.model.digest() != model.digest()) {
      throw DataError("resume checkpoint " + options.resume->string() + " was trained with a different network config");
    }
    model = std::move(ck.model);
    velocity = std::move(ck.momentum);
    start_epoch = ck.epoch;
    if (fs::exists(history_path)) {
      for (const auto& r : read_history(history_path).records) {
        if (r.epoch < start_epoch) result.history.records.push_back(r);
      }
    }
  }
  if (velocity.empty()) {
    for (const auto& p : model.parameters()) velocity.emplace_back(p.value.shape());
  }

  {
    std::ofstream hist(history_path, std::ios::trunc);
    if (!hist) throw DataError("cannot write " + history_path.string());
    for (const auto& r : result.history.records) hist << to_json(r).dump() << "\n";
  }

  auto& params = model.parameters();
  const auto mu = static_cast<float>(config.momentum);
  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = poly_lr(epoch, config.base_lr, config.horizon(), config.poly_power);
    const auto step_lr = static_cast<float>(lr);
    const auto pairs = balanced_batches(train_manifest, config.seeds.shuffle, epoch);
    double loss_sum = 0, ce_sum = 0, pen_sum = 0;
    for (std::size_t step = 0; step < pairs.size(); ++step) {
      const auto& pair = pairs[step];
      StepResult sr = compute_step(model, samples.at(pair.first), samples.at(pair.second), config);
      bool finite = std::isfinite(sr.loss.total);
      for (const auto& g : sr.grads) {
        for (float v : g) finite = finite && std::isfinite(v);
        if (!finite) break;
      }
      if (!finite) {
        write_failure(out_dir, epoch, step, pair, sr.loss);
        throw NumericError("non-finite loss or gradient at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + " (" + pair.first + ", " + pair.second + ")");
      }
      loss_sum += sr.loss.total;
      ce_sum += sr.loss.cross_entropy;
      pen_sum += sr.loss.penalty;
      for (std::size_t i = 0; i < params.size(); ++i) {
        float* w = params[i].value.data();
        float* v = velocity[i].data();
        const float* g = sr.grads[i].data();
        for (std::size_t j = 0, n = params[i].value.size(); j < n; ++j) {
          v[j] = mu * v[j] + g[j];
          w[j] -= step_lr * v[j];
        }
      }
    }
    const double n = static_cast<double>(pairs.size());
    EpochRecord rec{epoch, lr, loss_sum / n, ce_sum / n,
                    config.lambda > 0.0 ? pen_sum / n : model_penalty(model, config.penalty_form), 0.0};
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.records.push_back(rec);
    {
      std::ofstream hist(history_path, std::ios::app);
      hist << to_json(rec).dump() << "\n";
      if (!hist) throw DataError("cannot append to " + history_path.string());
    }
    if (options.on_epoch) options.on_epoch(rec);
    const int done = epoch + 1;
    if (config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.epochs) {
      char name[32];
      std::snprintf(name, sizeof name, "checkpoint_e%04d.ckpt", done);
      ckpt::save_checkpoint(out_dir / name, model, done, &velocity, {{"train", to_json(config)}});
    }
  }
  result.checkpoint = out_dir / "checkpoint_final.ckpt";
  ckpt::save_checkpoint(result.checkpoint, model, config.epochs, &velocity, {{"train", to_json(config)}});
  return result;
}

}  // namespace trus::train
