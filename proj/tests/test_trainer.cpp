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

#include <gtest/gtest.h>

#include <map>

#include "test_util.hpp"
#include "trus/checkpoint.hpp"
#include "trus/error.hpp"
#include "trus/phantom.hpp"
#include "trus/trainer.hpp"

namespace trus::train {
namespace {

using testing::TempDir;

net::NetworkConfig tiny(net::Variant v = net::Variant::fusion_or) {
  net::NetworkConfig c;
  c.width_multiplier = 1.0 / 16;
  c.stage_blocks = {1, 1, 1, 1};
  c.in_channels = 1;
  return net::apply_variant(c, v);
}

videodata::DatasetManifest id_manifest(std::size_t pos, std::size_t neg) {
  videodata::DatasetManifest m;
  for (std::size_t i = 0; i < pos; ++i) m.entries.push_back({"p" + std::to_string(i), "b", "s", 1, std::nullopt});
  for (std::size_t i = 0; i < neg; ++i) m.entries.push_back({"n" + std::to_string(i), "b", "s", 0, std::nullopt});
  return m;
}

videodata::DatasetManifest tiny_dataset(const std::filesystem::path& dir, std::size_t n = 6) {
  phantom::PhantomConfig pc;
  pc.n_samples = n;
  pc.dims = {8, 16, 16, 1};
  pc.master_seed = 31;
  return phantom::generate_dataset(pc, dir);
}

TEST(PolyLr, Values) {
  EXPECT_DOUBLE_EQ(poly_lr(0, 1e-4, 300, 0.9), 1e-4);
  EXPECT_NEAR(poly_lr(150, 1e-4, 300, 0.9), 5.3589e-5, 1e-9);
  EXPECT_NEAR(poly_lr(150, 1e-4, 300, 0.9), 1e-4 * std::pow(0.5, 0.9), 1e-18);
  EXPECT_EQ(poly_lr(300, 1e-4, 300, 0.9), 0.0);
  EXPECT_EQ(poly_lr(400, 1e-4, 300, 0.9), 0.0);
  EXPECT_DOUBLE_EQ(poly_lr(10, 0.5, 20, 1.0), 0.25);
  EXPECT_THROW(poly_lr(0, 1e-4, 0, 0.9), std::invalid_argument);
  EXPECT_THROW(poly_lr(-1, 1e-4, 300, 0.9), std::invalid_argument);
}

TEST(PolyLr, MonotoneNonIncreasing) {
  for (int h : {1, 7, 300}) {
    for (double p : {0.5, 0.9, 2.0}) {
      for (int e = 0; e <= h + 2; ++e) EXPECT_LE(poly_lr(e + 1, 0.1, h, p), poly_lr(e, 0.1, h, p));
    }
  }
}

TEST(BalancedBatches, EqualClasses) {
  const auto pairs = balanced_batches(id_manifest(3, 3), 11, 0);
  ASSERT_EQ(pairs.size(), 3u);
  std::set<std::string> pos, neg;
  for (const auto& [p, n] : pairs) {
    pos.insert(p);
    neg.insert(n);
  }
  EXPECT_EQ(pos.size(), 3u);
  EXPECT_EQ(neg.size(), 3u);
}

TEST(BalancedBatches, MinorityIsCycled) {
  const auto pairs = balanced_batches(id_manifest(5, 2), 11, 0);
  ASSERT_EQ(pairs.size(), 5u);
  std::map<std::string, int> pos, neg;
  for (const auto& [p, n] : pairs) {
    ++pos[p];
    ++neg[n];
  }
  EXPECT_EQ(pos.size(), 5u);
  ASSERT_EQ(neg.size(), 2u);
  std::vector<int> counts{neg.begin()->second, neg.rbegin()->second};
  std::sort(counts.begin(), counts.end());
  EXPECT_EQ(counts, (std::vector<int>{2, 3}));
}

TEST(BalancedBatches, Properties) {
  Rng rng(5);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t p = 1 + rng.below(9), n = 1 + rng.below(9);
    const auto m = id_manifest(p, n);
    const std::uint64_t seed = rng.below(1000);
    const int epoch = static_cast<int>(rng.below(50));
    const auto pairs = balanced_batches(m, seed, epoch);
    EXPECT_EQ(pairs, balanced_batches(m, seed, epoch));
    ASSERT_EQ(pairs.size(), std::max(p, n));
    std::map<std::string, int> seen;
    for (const auto& [a, b] : pairs) {
      EXPECT_EQ(a[0], 'p');
      EXPECT_EQ(b[0], 'n');
      ++seen[a];
      ++seen[b];
    }
    const std::size_t big = std::max(p, n), small = std::min(p, n);
    for (const auto& [id, count] : seen) {
      const bool minority = (id[0] == 'p') == (p < n);
      if (p == n || !minority) {
        EXPECT_EQ(count, 1) << id;
      } else {
        EXPECT_GE(count, static_cast<int>(big / small));
        EXPECT_LE(count, static_cast<int>((big + small - 1) / small));
      }
    }
  }
}

TEST(BalancedBatches, EpochsReshuffle) {
  const auto m = id_manifest(8, 8);
  EXPECT_NE(balanced_batches(m, 11, 0), balanced_batches(m, 11, 1));
  EXPECT_NE(balanced_batches(m, 11, 0), balanced_batches(m, 12, 0));
  EXPECT_THROW(balanced_batches(id_manifest(3, 0), 1, 0), DataError);
  EXPECT_THROW(balanced_batches(id_manifest(0, 3), 1, 0), DataError);
}

TEST(TrainConfig, ValidationAndJson) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.horizon(), 300);
  c.decay_horizon = 50;
  c.seeds.shuffle = 99;
  c.penalty_form = ortho::PenaltyForm::off_diagonal;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(back.horizon(), 50);
  EXPECT_EQ(back.seeds.shuffle, 99u);
  EXPECT_EQ(back.penalty_form, ortho::PenaltyForm::off_diagonal);
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_THROW(train_config_from_json({{"epochz", 3}}), UsageError);
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& t) { t.epochs = 0; }, [](TrainConfig& t) { t.base_lr = -1; },
           [](TrainConfig& t) { t.momentum = 1.0; }, [](TrainConfig& t) { t.lambda = -1e-5; },
           [](TrainConfig& t) { t.decay_horizon = 0; }, [](TrainConfig& t) { t.checkpoint_every = -1; }}) {
    TrainConfig t;
    mutate(t);
    EXPECT_THROW(t.validate(), std::invalid_argument);
  }
}

TEST(ComputeStep, LambdaOnlyAddsPenalty) {
  TempDir dir("step");
  const auto m = tiny_dataset(dir.path(), 4);
  const auto model = net::Model<float>::build(tiny(), 7);
  const auto pos = videodata::load_entry(m, m.entries[0].label == 1 ? m.entries[0] : m.entries[1]);
  const auto neg = videodata::load_entry(m, m.entries[0].label == 0 ? m.entries[0] : m.entries[1]);
  ASSERT_EQ(pos.label, 1);
  ASSERT_EQ(neg.label, 0);
  TrainConfig off, on;
  off.lambda = 0;
  on.lambda = 1e-5;
  const auto a = compute_step(model, pos, neg, off);
  const auto b = compute_step(model, pos, neg, on);
  EXPECT_EQ(a.loss.cross_entropy, b.loss.cross_entropy);
  EXPECT_EQ(a.loss.penalty, 0.0);
  const double r = model_penalty(model, ortho::PenaltyForm::abs_deviation);
  EXPECT_NEAR(b.loss.penalty, r, 1e-9 * r);
  EXPECT_NEAR(b.loss.total - a.loss.total, 1e-5 * r, 1e-9);
  EXPECT_NEAR(compute_step(model, pos, neg, off, true).loss.penalty, r, 1e-9 * r);

  // Gradient difference is lambda dR/dW on kernels and zero elsewhere.
  const auto kernels = model.kernel_set();
  std::vector<bool> is_kernel(model.parameters().size(), false);
  for (std::size_t k : kernels) is_kernel[k] = true;
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    if (is_kernel[i]) {
      Tensor<double> g;
      ortho::ortho_penalty(model.parameters()[i].value.cast<double>(), ortho::PenaltyForm::abs_deviation, &g);
      for (std::size_t j = 0; j < g.size(); j += 37) {
        EXPECT_NEAR(b.grads[i][j] - a.grads[i][j], 1e-5 * g[j], 1e-6) << model.parameters()[i].name;
      }
    } else {
      EXPECT_EQ(b.grads[i], a.grads[i]) << model.parameters()[i].name;
    }
  }
}

TEST(ComputeStep, RejectsWrongLabels) {
  TempDir dir("step");
  const auto m = tiny_dataset(dir.path(), 4);
  const auto model = net::Model<float>::build(tiny(), 7);
  const auto s = videodata::load_entry(m, m.entries[0]);
  EXPECT_THROW(compute_step(model, s, s, TrainConfig{}), std::invalid_argument);
}

TEST(Train, TwoEpochRun) {
  TempDir data("train_data"), out("train_out");
  const auto m = tiny_dataset(data.path());
  TrainConfig c;
  c.epochs = 2;
  c.base_lr = 1e-3;
  c.checkpoint_every = 1;
  std::vector<int> seen;
  TrainOptions opts;
  opts.on_epoch = [&](const EpochRecord& r) { seen.push_back(r.epoch); };
  const auto result = train(tiny(), c, m, out.path(), opts);

  EXPECT_EQ(seen, (std::vector<int>{0, 1}));
  ASSERT_EQ(result.history.records.size(), 2u);
  const RunHistory disk = read_history(out / "history.jsonl");
  ASSERT_EQ(disk.records.size(), 2u);
  for (int e = 0; e < 2; ++e) {
    const auto& r = disk.records[e];
    EXPECT_EQ(r.epoch, e);
    EXPECT_DOUBLE_EQ(r.lr, poly_lr(e, c.base_lr, c.horizon(), c.poly_power));
    EXPECT_TRUE(std::isfinite(r.loss));
    EXPECT_NEAR(r.loss, r.ce + c.lambda * r.penalty, 1e-9 * std::max(1.0, r.loss));
  }
  EXPECT_TRUE(std::filesystem::exists(out / "checkpoint_e0001.ckpt"));
  EXPECT_FALSE(std::filesystem::exists(out / "checkpoint_e0002.ckpt"));
  EXPECT_EQ(result.checkpoint, out / "checkpoint_final.ckpt");
  const auto ck = ckpt::load_checkpoint(result.checkpoint);
  EXPECT_EQ(ck.epoch, 2);
  EXPECT_EQ(ck.model.digest(), net::config_digest(tiny()));
  EXPECT_EQ(ck.momentum.size(), ck.model.parameters().size());
  for (std::size_t i = 0; i < ck.model.parameters().size(); ++i) {
    EXPECT_EQ(ck.model.parameters()[i].value, result.model.parameters()[i].value);
  }
}

TEST(Train, ParametersMoveAndInitMatchesSeed) {
  TempDir data("train_data"), out("train_out");
  const auto m = tiny_dataset(data.path());
  TrainConfig c;
  c.epochs = 1;
  c.base_lr = 1e-3;
  const auto result = train(tiny(), c, m, out.path());
  const auto init = net::Model<float>::build(tiny(), c.seeds.init);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < init.parameters().size(); ++i) {
    moved += !(init.parameters()[i].value == result.model.parameters()[i].value);
  }
  EXPECT_GT(moved, init.parameters().size() / 2);
}

TEST(Train, ResumeMatchesUninterruptedRun) {
  TempDir data("train_data"), full("full"), part("part");
  const auto m = tiny_dataset(data.path());
  TrainConfig c;
  c.epochs = 3;
  c.base_lr = 1e-3;
  c.checkpoint_every = 1;
  const auto straight = train(tiny(), c, m, full.path());

  TrainOptions opts;
  opts.resume = full / "checkpoint_e0001.ckpt";
  const auto resumed = train(tiny(), c, m, part.path(), opts);
  ASSERT_EQ(resumed.history.records.size(), 2u);
  EXPECT_EQ(resumed.history.records.front().epoch, 1);
  for (std::size_t i = 0; i < straight.model.parameters().size(); ++i) {
    EXPECT_EQ(resumed.model.parameters()[i].value, straight.model.parameters()[i].value);
  }
  const auto a = read_history(full / "history.jsonl");
  const auto b = read_history(part / "history.jsonl");
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(a.records[i + 1].loss, b.records[i].loss);
  }
}

TEST(Train, SameSeedsSameWeights) {
  TempDir data("train_data"), a("a"), b("b");
  const auto m = tiny_dataset(data.path());
  TrainConfig c;
  c.epochs = 1;
  c.base_lr = 1e-3;
  const auto x = train(tiny(), c, m, a.path());
  const auto y = train(tiny(), c, m, b.path());
  for (std::size_t i = 0; i < x.model.parameters().size(); ++i) {
    EXPECT_EQ(x.model.parameters()[i].value, y.model.parameters()[i].value);
  }
}

TEST(Train, LossDecreasesOnTinySet) {
  TempDir data("train_data"), out("train_out");
  const auto m = tiny_dataset(data.path(), 8);
  TrainConfig c;
  c.epochs = 12;
  c.base_lr = 0.01;
  c.lambda = 0;
  const auto result = train(tiny(), c, m, out.path());
  const auto& r = result.history.records;
  EXPECT_LT(r.back().ce, r.front().ce);
}

TEST(Train, DivergenceIsReported) {
  TempDir data("train_data"), out("train_out");
  const auto m = tiny_dataset(data.path());
  TrainConfig c;
  c.epochs = 3;
  c.base_lr = 1e30;
  c.lambda = 0;
  EXPECT_THROW(train(tiny(), c, m, out.path()), NumericError);
  EXPECT_TRUE(std::filesystem::exists(out / "failure.json"));
}

TEST(Train, MismatchedResumeRejected) {
  TempDir data("train_data"), a("a"), b("b");
  const auto m = tiny_dataset(data.path());
  TrainConfig c;
  c.epochs = 1;
  c.base_lr = 1e-3;
  train(tiny(), c, m, a.path());
  TrainOptions opts;
  opts.resume = a / "checkpoint_final.ckpt";
  EXPECT_THROW(train(tiny(net::Variant::concat), c, m, b.path(), opts), DataError);
}

}  // namespace
}  // namespace trus::train
