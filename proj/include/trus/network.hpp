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

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "trus/fusion.hpp"
#include "trus/layers.hpp"
#include "trus/tensor.hpp"
#include "trus/videodata.hpp"

namespace trus::net {

enum class Modality { bmode, swe };

/// Ablation rows: single modalities, channel concat, adaptive fusion with and without the penalty.
enum class Variant { bmode, swe, concat, fusion, fusion_or };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& text);
const std::array<Variant, 5>& all_variants();

struct NetworkConfig {
  std::array<std::size_t, 4> stage_blocks{3, 4, 6, 3};
  double width_multiplier = 1.0;
  std::size_t in_channels = 3;
  std::size_t num_classes = 2;
  bool fusion_enabled = true;
  std::optional<Modality> single_modality;
  bool concat_baseline = false;

  bool dual_stream() const { return !single_modality && !concat_baseline; }
  std::size_t base_width() const;
  std::size_t stage_width(std::size_t stage) const { return base_width() << stage; }
  std::size_t stage_channels(std::size_t stage) const { return 4 * stage_width(stage); }
  /// Throws std::invalid_argument naming the violated rule.
  void validate() const;

  bool operator==(const NetworkConfig&) const = default;
};

NetworkConfig apply_variant(NetworkConfig base, Variant variant);

nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& doc);
/// Stable hex digest of the canonical config document.
std::string config_digest(const NetworkConfig& config);

enum class ParamKind { conv_kernel, conv_bias, norm_scale, norm_shift, linear_weight, linear_bias };
std::string to_string(ParamKind kind);
ParamKind param_kind_from_string(const std::string& text);

template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind;
  Tensor<T> value;
};

template <typename T>
using Gradients = std::vector<Tensor<T>>;

struct ConvUnit {
  std::size_t weight;
  nn::Conv3dGeometry geom;
};

struct NormUnit {
  std::size_t gamma, beta, groups;
};

struct BlockSpec {
  ConvUnit conv1, conv2, conv3;
  NormUnit norm1, norm2, norm3;
  std::optional<ConvUnit> down;
  std::optional<NormUnit> down_norm;
};

struct BackboneSpec {
  ConvUnit stem;
  NormUnit stem_norm;
  nn::PoolGeometry pool;
  std::array<std::vector<BlockSpec>, 4> stages;
};

struct FusionSpec {
  std::size_t channels;
  std::size_t conv_x, bias_x, conv_e, bias_e;
  std::size_t in_x_scale, in_x_shift, in_e_scale, in_e_shift;
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;  // (N, 2)
  /// Per-stage branch outputs before fusion; stage_e is empty for one-backbone models.
  std::vector<Tensor<T>> stage_x, stage_e;
  /// Per-stage fused maps (dual-stream only).
  std::vector<Tensor<T>> fused;

  /// Activation read by Grad-CAM for stage index 0..3.
  const Tensor<T>& stage_map(std::size_t stage) const;
};

/// Everything a backward pass needs from the matching forward pass.
template <typename T>
struct Trace {
  nn::Tape<T> tape;
  std::vector<fusion::StageFeatures<T>> fusion_inputs;
  std::vector<fusion::AsfCache<T>> fusion_caches;
  Shape head_input_shape;
  Tensor<T> pooled;
};

/// Dual-stream (or single-backbone) 3-D bottleneck ResNet with a linear head.
template <typename T>
class Model {
 public:
  static Model build(const NetworkConfig& config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;
  std::size_t backbone_count() const { return backbones_.size(); }
  std::size_t fusion_block_count() const { return fusion_.size(); }
  std::string digest() const { return config_digest(config_); }

  Gradients<T> zero_gradients() const;
  /// Indices of every convolution kernel (backbones and fusion blocks).
  std::vector<std::size_t> kernel_set() const;
  static std::vector<std::string> layer_ids() { return {"stage1", "stage2", "stage3", "stage4"}; }

  /// Inputs are (N, C, T, H, W). One-backbone variants ignore the unused modality.
  ForwardResult<T> forward(const Tensor<T>& bmode, const Tensor<T>& swe, Trace<T>* trace = nullptr) const;

  /// Accumulates parameter gradients into `grads`. When `probe_stage` is set, the
  /// gradient reaching that stage map is written to `probe_grad`.
  void backward(Trace<T>& trace, const Tensor<T>& dlogits, Gradients<T>& grads,
                std::optional<std::size_t> probe_stage = std::nullopt,
                Tensor<T>* probe_grad = nullptr) const;

  /// Same architecture with parameters converted to U.
  template <typename U>
  Model<U> cast() const;

  fusion::FusionBlockParams<T> fusion_params(std::size_t stage) const;
  void set_fusion_params(std::size_t stage, const fusion::FusionBlockParams<T>& p);

 private:
  template <typename U>
  friend class Model;

  NetworkConfig config_;
  std::vector<Parameter<T>> params_;
  std::vector<BackboneSpec> backbones_;
  std::vector<FusionSpec> fusion_;
  std::size_t head_weight_ = 0, head_bias_ = 0;
};

/// Converts (T, H, W, C) videos into (N, C, T, H, W) batches.
std::pair<Tensor<float>, Tensor<float>> to_batch(std::span<const videodata::TrusSample* const> samples);

/// Softmax probability of class 1 per row of (N, 2) logits.
std::vector<double> positive_probabilities(const Tensor<float>& logits);

double predict_proba(const Model<float>& model, const videodata::TrusSample& sample);

}  // namespace trus::net
