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

#include "trus/network.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "trus/digest.hpp"
#include "trus/error.hpp"
#include "trus/rng.hpp"

namespace trus::net {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxNormGroups = 8;
constexpr double kNormEps = 1e-5;

const std::array<Variant, 5> kVariants{Variant::bmode, Variant::swe, Variant::concat, Variant::fusion,
                                       Variant::fusion_or};

}  // namespace

std::string to_string(Variant v) {
  switch (v) {
    case Variant::bmode: return "bmode";
    case Variant::swe: return "swe";
    case Variant::concat: return "concat";
    case Variant::fusion: return "fusion";
    case Variant::fusion_or: return "fusion_or";
  }
  return "fusion_or";
}

Variant variant_from_string(const std::string& text) {
  for (Variant v : kVariants) {
    if (to_string(v) == text) return v;
  }
  throw UsageError("unknown variant '" + text + "' (expected bmode, swe, concat, fusion or fusion_or)");
}

const std::array<Variant, 5>& all_variants() { return kVariants; }

std::size_t NetworkConfig::base_width() const {
  return static_cast<std::size_t>(std::max<long long>(1, std::llround(64.0 * width_multiplier)));
}

void NetworkConfig::validate() const {
  auto fail = [](const std::string& rule) { throw std::invalid_argument("network config: " + rule); };
  for (std::size_t b : stage_blocks) {
    if (b < 1) fail("every stage needs at least one block");
  }
  if (!(width_multiplier > 0.0)) fail("width_multiplier must be > 0");
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (num_classes != 2) fail("num_classes is fixed at 2");
  if (single_modality && concat_baseline) fail("single_modality and concat_baseline are mutually exclusive");
  if (!dual_stream() && fusion_enabled) fail("fusion_enabled requires the dual-stream layout");
  if (dual_stream() && !fusion_enabled) {
    fail("the dual-stream layout requires fusion_enabled (use concat_baseline for early fusion)");
  }
}

NetworkConfig apply_variant(NetworkConfig base, Variant variant) {
  base.single_modality.reset();
  base.concat_baseline = false;
  base.fusion_enabled = false;
  switch (variant) {
    case Variant::bmode: base.single_modality = Modality::bmode; break;
    case Variant::swe: base.single_modality = Modality::swe; break;
    case Variant::concat: base.concat_baseline = true; break;
    case Variant::fusion:
    case Variant::fusion_or: base.fusion_enabled = true; break;
  }
  return base;
}

json to_json(const NetworkConfig& c) {
  json single = nullptr;
  if (c.single_modality) single = *c.single_modality == Modality::bmode ? "bmode" : "swe";
  return json{{"stage_blocks", c.stage_blocks},     {"width_multiplier", c.width_multiplier},
              {"in_channels", c.in_channels},       {"num_classes", c.num_classes},
              {"fusion_enabled", c.fusion_enabled}, {"single_modality", single},
              {"concat_baseline", c.concat_baseline}};
}

NetworkConfig network_config_from_json(const json& doc) {
  NetworkConfig c;
  try {
    for (const auto& [key, value] : doc.items()) {
      if (key == "stage_blocks") {
        c.stage_blocks = value.get<std::array<std::size_t, 4>>();
      } else if (key == "width_multiplier") {
        c.width_multiplier = value.get<double>();
      } else if (key == "in_channels") {
        c.in_channels = value.get<std::size_t>();
      } else if (key == "num_classes") {
        c.num_classes = value.get<std::size_t>();
      } else if (key == "fusion_enabled") {
        c.fusion_enabled = value.get<bool>();
      } else if (key == "single_modality") {
        if (value.is_null()) {
          c.single_modality.reset();
        } else {
          const auto m = value.get<std::string>();
          if (m != "bmode" && m != "swe") throw UsageError("single_modality must be bmode, swe or null");
          c.single_modality = m == "bmode" ? Modality::bmode : Modality::swe;
        }
      } else if (key == "concat_baseline") {
        c.concat_baseline = value.get<bool>();
      } else {
        throw UsageError("network config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("network config: ") + e.what());
  }
  return c;
}

std::string config_digest(const NetworkConfig& config) { return digest_text(to_json(config).dump()); }

std::string to_string(ParamKind kind) {
  switch (kind) {
    case ParamKind::conv_kernel: return "conv_kernel";
    case ParamKind::conv_bias: return "conv_bias";
    case ParamKind::norm_scale: return "norm_scale";
    case ParamKind::norm_shift: return "norm_shift";
    case ParamKind::linear_weight: return "linear_weight";
    case ParamKind::linear_bias: return "linear_bias";
  }
  return "conv_kernel";
}

ParamKind param_kind_from_string(const std::string& text) {
  for (ParamKind k : {ParamKind::conv_kernel, ParamKind::conv_bias, ParamKind::norm_scale, ParamKind::norm_shift,
                      ParamKind::linear_weight, ParamKind::linear_bias}) {
    if (to_string(k) == text) return k;
  }
  throw DataError("unknown parameter kind '" + text + "'");
}

template <typename T>
const Tensor<T>& ForwardResult<T>::stage_map(std::size_t stage) const {
  if (stage >= 4) throw std::invalid_argument("stage index must be 0..3");
  return fused.empty() ? stage_x.at(stage) : fused.at(stage);
}

// --- construction ------------------------------------------------------------

namespace {

template <typename T>
class Builder {
 public:
  Builder(std::vector<Parameter<T>>& params, std::uint64_t seed) : params_(params), rng_(seed) {}

  std::size_t add(std::string name, ParamKind kind, Shape shape, T fill = T{0}) {
    params_.push_back({std::move(name), kind, Tensor<T>(std::move(shape), fill)});
    return params_.size() - 1;
  }

  std::size_t add_normal(std::string name, ParamKind kind, Shape shape, double stddev) {
    const std::size_t idx = add(std::move(name), kind, std::move(shape));
    for (T& v : params_[idx].value) v = static_cast<T>(stddev * rng_.normal());
    return idx;
  }

  ConvUnit conv(const std::string& name, const nn::Conv3dGeometry& geom) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(geom.fan_in()));
    return {add_normal(name + ".weight", ParamKind::conv_kernel, geom.weight_shape(), stddev), geom};
  }

  NormUnit norm(const std::string& name, std::size_t channels) {
    const std::size_t gamma = add(name + ".scale", ParamKind::norm_scale, {channels}, T{1});
    const std::size_t beta = add(name + ".shift", ParamKind::norm_shift, {channels});
    return {gamma, beta, std::gcd(channels, kMaxNormGroups)};
  }

  BackboneSpec backbone(const std::string& prefix, const NetworkConfig& c, std::size_t in_channels) {
    BackboneSpec bb;
    const std::size_t base = c.base_width();
    bb.stem = conv(prefix + ".stem.conv", {in_channels, base, {3, 7, 7}, {1, 2, 2}, {1, 3, 3}});
    bb.stem_norm = norm(prefix + ".stem.norm", base);
    std::size_t in = base;
    for (std::size_t s = 0; s < 4; ++s) {
      const std::size_t width = c.stage_width(s);
      const std::size_t out = 4 * width;
      const std::size_t stride = s == 0 ? 1 : 2;
      for (std::size_t b = 0; b < c.stage_blocks[s]; ++b) {
        const std::string name = prefix + ".stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
        const std::size_t st = b == 0 ? stride : 1;
        BlockSpec blk;
        blk.conv1 = conv(name + ".conv1", {in, width, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}});
        blk.norm1 = norm(name + ".norm1", width);
        blk.conv2 = conv(name + ".conv2", {width, width, {3, 3, 3}, {st, st, st}, {1, 1, 1}});
        blk.norm2 = norm(name + ".norm2", width);
        blk.conv3 = conv(name + ".conv3", {width, out, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}});
        blk.norm3 = norm(name + ".norm3", out);
        if (b == 0) {
          blk.down = conv(name + ".down.conv", {in, out, {1, 1, 1}, {st, st, st}, {0, 0, 0}});
          blk.down_norm = norm(name + ".down.norm", out);
        }
        bb.stages[s].push_back(blk);
        in = out;
      }
    }
    return bb;
  }

  FusionSpec fusion(const std::string& prefix, std::size_t channels) {
    const double stddev = 0.1 / std::sqrt(2.0 * static_cast<double>(channels));
    FusionSpec f;
    f.channels = channels;
    f.conv_x = add_normal(prefix + ".conv_x.weight", ParamKind::conv_kernel, {1, 2 * channels, 1, 1, 1}, stddev);
    f.bias_x = add(prefix + ".conv_x.bias", ParamKind::conv_bias, {1});
    f.conv_e = add_normal(prefix + ".conv_e.weight", ParamKind::conv_kernel, {1, 2 * channels, 1, 1, 1}, stddev);
    f.bias_e = add(prefix + ".conv_e.bias", ParamKind::conv_bias, {1});
    f.in_x_scale = add(prefix + ".in_x.scale", ParamKind::norm_scale, {1}, T{1});
    f.in_x_shift = add(prefix + ".in_x.shift", ParamKind::norm_shift, {1});
    f.in_e_scale = add(prefix + ".in_e.scale", ParamKind::norm_scale, {1}, T{1});
    f.in_e_shift = add(prefix + ".in_e.shift", ParamKind::norm_shift, {1});
    return f;
  }

 private:
  std::vector<Parameter<T>>& params_;
  Rng rng_;
};

template <typename T>
const Tensor<T>& value(const std::vector<Parameter<T>>& p, std::size_t i) {
  return p[i].value;
}

template <typename T>
Tensor<T> conv_fwd(const std::vector<Parameter<T>>& p, const ConvUnit& u, const Tensor<T>& x) {
  return nn::conv3d_forward(x, value(p, u.weight), static_cast<const Tensor<T>*>(nullptr), u.geom);
}

template <typename T>
Tensor<T> conv_bwd(const std::vector<Parameter<T>>& p, const ConvUnit& u, const Tensor<T>& x, const Tensor<T>& dy,
                   Gradients<T>& g, bool want_dx = true) {
  return nn::conv3d_backward(x, value(p, u.weight), dy, u.geom, g[u.weight], static_cast<Tensor<T>*>(nullptr),
                             want_dx);
}

template <typename T>
Tensor<T> norm_fwd(const std::vector<Parameter<T>>& p, const NormUnit& u, const Tensor<T>& x, nn::Tape<T>* tape) {
  return nn::group_norm_forward(x, value(p, u.gamma), value(p, u.beta), u.groups, static_cast<T>(kNormEps), tape);
}

template <typename T>
Tensor<T> norm_bwd(const std::vector<Parameter<T>>& p, const NormUnit& u, const Tensor<T>& dy, nn::Tape<T>& tape,
                   Gradients<T>& g) {
  return nn::group_norm_backward(dy, value(p, u.gamma), u.groups, tape, g[u.gamma], g[u.beta]);
}

template <typename T>
Tensor<T> stem_forward(const std::vector<Parameter<T>>& p, const BackboneSpec& bb, const Tensor<T>& x,
                       nn::Tape<T>* tape) {
  if (tape) tape->push(x);
  Tensor<T> a = norm_fwd(p, bb.stem_norm, conv_fwd(p, bb.stem, x), tape);
  nn::relu_inplace(a);
  Tensor<T> y = nn::max_pool3d_forward(a, bb.pool, tape);
  if (tape) tape->push(std::move(a));
  return y;
}

template <typename T>
void stem_backward(const std::vector<Parameter<T>>& p, const BackboneSpec& bb, const Tensor<T>& dy,
                   nn::Tape<T>& tape, Gradients<T>& g) {
  const Tensor<T> a = tape.pop();
  Tensor<T> d = nn::max_pool3d_backward(dy, a.shape(), tape);
  nn::relu_backward_inplace(d, a);
  d = norm_bwd(p, bb.stem_norm, d, tape, g);
  const Tensor<T> x = tape.pop();
  conv_bwd(p, bb.stem, x, d, g, false);
}

template <typename T>
Tensor<T> block_forward(const std::vector<Parameter<T>>& p, const BlockSpec& blk, const Tensor<T>& x,
                        nn::Tape<T>* tape) {
  if (tape) tape->push(x);
  Tensor<T> a = norm_fwd(p, blk.norm1, conv_fwd(p, blk.conv1, x), tape);
  nn::relu_inplace(a);
  Tensor<T> b = norm_fwd(p, blk.norm2, conv_fwd(p, blk.conv2, a), tape);
  nn::relu_inplace(b);
  Tensor<T> c = norm_fwd(p, blk.norm3, conv_fwd(p, blk.conv3, b), tape);
  if (tape) {
    tape->push(std::move(a));
    tape->push(b);
  }
  if (blk.down) {
    nn::add_inplace(c, norm_fwd(p, *blk.down_norm, conv_fwd(p, *blk.down, x), tape));
  } else {
    nn::add_inplace(c, x);
  }
  nn::relu_inplace(c);
  if (tape) tape->push(c);
  return c;
}

// Tape layout per block (bottom to top): x, norm1, norm2, norm3, a, b, [down norm], out.
// Norm caches are interleaved with the activations in forward order, so the
// backward pass below pops them in exactly reverse order.
template <typename T>
Tensor<T> block_backward(const std::vector<Parameter<T>>& p, const BlockSpec& blk, Tensor<T> dy, nn::Tape<T>& tape,
                         Gradients<T>& g) {
  const Tensor<T> out = tape.pop();
  nn::relu_backward_inplace(dy, out);
  Tensor<T> d_short;
  if (blk.down) d_short = norm_bwd(p, *blk.down_norm, dy, tape, g);
  const Tensor<T> b = tape.pop();
  const Tensor<T> a = tape.pop();
  Tensor<T> d = norm_bwd(p, blk.norm3, dy, tape, g);
  d = conv_bwd(p, blk.conv3, b, d, g);
  nn::relu_backward_inplace(d, b);
  d = norm_bwd(p, blk.norm2, d, tape, g);
  d = conv_bwd(p, blk.conv2, a, d, g);
  nn::relu_backward_inplace(d, a);
  d = norm_bwd(p, blk.norm1, d, tape, g);
  const Tensor<T> x = tape.pop();
  Tensor<T> dx = conv_bwd(p, blk.conv1, x, d, g);
  if (blk.down) {
    nn::add_inplace(dx, conv_bwd(p, *blk.down, x, d_short, g));
  } else {
    nn::add_inplace(dx, dy);
  }
  return dx;
}

template <typename T>
Tensor<T> stage_forward(const std::vector<Parameter<T>>& p, const BackboneSpec& bb, std::size_t s, Tensor<T> x,
                        nn::Tape<T>* tape) {
  for (const BlockSpec& blk : bb.stages[s]) x = block_forward(p, blk, x, tape);
  return x;
}

template <typename T>
Tensor<T> stage_backward(const std::vector<Parameter<T>>& p, const BackboneSpec& bb, std::size_t s, Tensor<T> d,
                         nn::Tape<T>& tape, Gradients<T>& g) {
  for (auto it = bb.stages[s].rbegin(); it != bb.stages[s].rend(); ++it) d = block_backward(p, *it, std::move(d), tape, g);
  return d;
}

template <typename T>
Tensor<T> channel_concat(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "concat baseline inputs");
  const std::size_t n = a.dim(0), per = a.size() / n;
  Shape shape = a.shape();
  shape[1] *= 2;
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * per, per, out.data() + 2 * i * per);
    std::copy_n(b.data() + i * per, per, out.data() + (2 * i + 1) * per);
  }
  return out;
}

}  // namespace

template <typename T>
Model<T> Model<T>::build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Model m;
  m.config_ = config;
  Builder<T> b(m.params_, seed);
  if (config.dual_stream()) {
    m.backbones_.push_back(b.backbone("bmode", config, config.in_channels));
    m.backbones_.push_back(b.backbone("swe", config, config.in_channels));
    for (std::size_t s = 0; s < 4; ++s) {
      m.fusion_.push_back(b.fusion("fusion" + std::to_string(s + 1), config.stage_channels(s)));
    }
  } else if (config.concat_baseline) {
    m.backbones_.push_back(b.backbone("concat", config, 2 * config.in_channels));
  } else {
    const bool bmode = *config.single_modality == Modality::bmode;
    m.backbones_.push_back(b.backbone(bmode ? "bmode" : "swe", config, config.in_channels));
  }
  const std::size_t features = config.stage_channels(3);
  m.head_weight_ = b.add_normal("head.weight", ParamKind::linear_weight, {config.num_classes, features}, 0.01);
  m.head_bias_ = b.add("head.bias", ParamKind::linear_bias, {config.num_classes});
  return m;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename T>
Gradients<T> Model<T>::zero_gradients() const {
  Gradients<T> g;
  g.reserve(params_.size());
  for (const auto& p : params_) g.emplace_back(p.value.shape());
  return g;
}

template <typename T>
std::vector<std::size_t> Model<T>::kernel_set() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].kind == ParamKind::conv_kernel) out.push_back(i);
  }
  return out;
}

template <typename T>
fusion::FusionBlockParams<T> Model<T>::fusion_params(std::size_t stage) const {
  const FusionSpec& f = fusion_.at(stage);
  fusion::FusionBlockParams<T> p;
  p.channels = f.channels;
  p.conv_x = params_[f.conv_x].value.storage();
  p.conv_e = params_[f.conv_e].value.storage();
  p.bias_x = params_[f.bias_x].value[0];
  p.bias_e = params_[f.bias_e].value[0];
  p.in_x_scale = params_[f.in_x_scale].value[0];
  p.in_x_shift = params_[f.in_x_shift].value[0];
  p.in_e_scale = params_[f.in_e_scale].value[0];
  p.in_e_shift = params_[f.in_e_shift].value[0];
  return p;
}

template <typename T>
void Model<T>::set_fusion_params(std::size_t stage, const fusion::FusionBlockParams<T>& p) {
  const FusionSpec& f = fusion_.at(stage);
  p.validate();
  if (p.channels != f.channels) throw std::invalid_argument("set_fusion_params: channel count mismatch");
  params_[f.conv_x].value.storage() = p.conv_x;
  params_[f.conv_e].value.storage() = p.conv_e;
  params_[f.bias_x].value[0] = p.bias_x;
  params_[f.bias_e].value[0] = p.bias_e;
  params_[f.in_x_scale].value[0] = p.in_x_scale;
  params_[f.in_x_shift].value[0] = p.in_x_shift;
  params_[f.in_e_scale].value[0] = p.in_e_scale;
  params_[f.in_e_shift].value[0] = p.in_e_shift;
}

template <typename T>
ForwardResult<T> Model<T>::forward(const Tensor<T>& bmode, const Tensor<T>& swe, Trace<T>* trace) const {
  auto check = [&](const Tensor<T>& x, const char* what) {
    if (x.rank() != 5 || x.dim(1) != config_.in_channels || x.dim(0) == 0) {
      throw std::invalid_argument(std::string("forward: ") + what + " batch must be (N," +
                                  std::to_string(config_.in_channels) + ",T,H,W), got " + shape_string(x.shape()));
    }
  };
  nn::Tape<T>* tape = trace ? &trace->tape : nullptr;
  if (trace) {
    trace->tape.clear();
    trace->fusion_inputs.clear();
    trace->fusion_caches.clear();
  }
  ForwardResult<T> r;
  const Tensor<T>* head_in = nullptr;
  if (config_.dual_stream()) {
    check(bmode, "bmode");
    check(swe, "swe");
    require_same_shape(bmode, swe, "forward bmode/swe");
    Tensor<T> xb = stem_forward(params_, backbones_[0], bmode, tape);
    Tensor<T> xe = stem_forward(params_, backbones_[1], swe, tape);
    for (std::size_t s = 0; s < 4; ++s) {
      fusion::StageFeatures<T> feats{stage_forward(params_, backbones_[0], s, std::move(xb), tape),
                                     stage_forward(params_, backbones_[1], s, std::move(xe), tape)};
      fusion::AsfCache<T> cache;
      fusion::AsfOutput<T> out = fusion::asf_forward(feats, fusion_params(s), trace ? &cache : nullptr);
      r.stage_x.push_back(feats.f_x);
      r.stage_e.push_back(feats.f_e);
      r.fused.push_back(std::move(out.fused));
      xb = std::move(out.branch_x);
      xe = std::move(out.branch_e);
      if (trace) {
        trace->fusion_inputs.push_back(std::move(feats));
        trace->fusion_caches.push_back(std::move(cache));
      }
    }
    head_in = &r.fused[3];
  } else {
    Tensor<T> x;
    if (config_.concat_baseline) {
      check(bmode, "bmode");
      check(swe, "swe");
      x = channel_concat(bmode, swe);
    } else {
      const bool use_bmode = *config_.single_modality == Modality::bmode;
      check(use_bmode ? bmode : swe, use_bmode ? "bmode" : "swe");
      x = use_bmode ? bmode : swe;
    }
    x = stem_forward(params_, backbones_[0], x, tape);
    for (std::size_t s = 0; s < 4; ++s) {
      x = stage_forward(params_, backbones_[0], s, std::move(x), tape);
      r.stage_x.push_back(x);
    }
    head_in = &r.stage_x[3];
  }
  Tensor<T> pooled = nn::global_avg_pool(*head_in);
  r.logits = nn::linear_forward(pooled, params_[head_weight_].value, params_[head_bias_].value);
  if (trace) {
    trace->head_input_shape = head_in->shape();
    trace->pooled = std::move(pooled);
  }
  return r;
}

template <typename T>
void Model<T>::backward(Trace<T>& trace, const Tensor<T>& dlogits, Gradients<T>& g,
                        std::optional<std::size_t> probe_stage, Tensor<T>* probe_grad) const {
  if (g.size() != params_.size()) throw std::invalid_argument("backward: gradient set does not match parameters");
  const Tensor<T> d_pooled =
      nn::linear_backward(trace.pooled, params_[head_weight_].value, dlogits, g[head_weight_], g[head_bias_]);
  Tensor<T> d_head = nn::global_avg_pool_backward(d_pooled, trace.head_input_shape);
  nn::Tape<T>& tape = trace.tape;
  if (config_.dual_stream()) {
    Tensor<T> dxb, dxe;
    for (std::size_t s = 4; s-- > 0;) {
      const bool top = s == 3;
      fusion::AsfGradients<T> ag =
          fusion::asf_backward(trace.fusion_inputs[s], fusion_params(s), trace.fusion_caches[s],
                               top ? &d_head : nullptr, top ? nullptr : &dxb, top ? nullptr : &dxe);
      if (probe_stage && *probe_stage == s && probe_grad) *probe_grad = ag.d_fused;
      const FusionSpec& f = fusion_[s];
      for (std::size_t k = 0; k < ag.d_params.conv_x.size(); ++k) {
        g[f.conv_x][k] += ag.d_params.conv_x[k];
        g[f.conv_e][k] += ag.d_params.conv_e[k];
      }
      g[f.bias_x][0] += ag.d_params.bias_x;
      g[f.bias_e][0] += ag.d_params.bias_e;
      g[f.in_x_scale][0] += ag.d_params.in_x_scale;
      g[f.in_x_shift][0] += ag.d_params.in_x_shift;
      g[f.in_e_scale][0] += ag.d_params.in_e_scale;
      g[f.in_e_shift][0] += ag.d_params.in_e_shift;
      dxe = stage_backward(params_, backbones_[1], s, std::move(ag.d_f_e), tape, g);
      dxb = stage_backward(params_, backbones_[0], s, std::move(ag.d_f_x), tape, g);
    }
    stem_backward(params_, backbones_[1], dxe, tape, g);
    stem_backward(params_, backbones_[0], dxb, tape, g);
  } else {
    Tensor<T> d = std::move(d_head);
    for (std::size_t s = 4; s-- > 0;) {
      if (probe_stage && *probe_stage == s && probe_grad) *probe_grad = d;
      d = stage_backward(params_, backbones_[0], s, std::move(d), tape, g);
    }
    stem_backward(params_, backbones_[0], d, tape, g);
  }
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> m;
  m.config_ = config_;
  m.backbones_ = backbones_;
  m.fusion_ = fusion_;
  m.head_weight_ = head_weight_;
  m.head_bias_ = head_bias_;
  for (const auto& p : params_) m.params_.push_back({p.name, p.kind, p.value.template cast<U>()});
  return m;
}

template struct ForwardResult<float>;
template struct ForwardResult<double>;
template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;

std::pair<Tensor<float>, Tensor<float>> to_batch(std::span<const videodata::TrusSample* const> samples) {
  if (samples.empty()) throw std::invalid_argument("to_batch: no samples");
  const videodata::TrusSample& first = *samples[0];
  first.validate();
  const std::size_t n = samples.size(), t = first.frames(), h = first.height(), w = first.width(),
                    c = first.channels();
  const std::size_t s = t * h * w;
  Tensor<float> xb({n, c, t, h, w});
  Tensor<float> xe({n, c, t, h, w});
  for (std::size_t i = 0; i < n; ++i) {
    const videodata::TrusSample& smp = *samples[i];
    smp.validate();
    if (smp.bmode.shape() != first.bmode.shape()) {
      throw std::invalid_argument("to_batch: sample " + smp.id + " has shape " + shape_string(smp.bmode.shape()) +
                                  ", batch expects " + shape_string(first.bmode.shape()));
    }
    for (std::size_t v = 0; v < s; ++v) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        xb[(i * c + ch) * s + v] = smp.bmode[v * c + ch];
        xe[(i * c + ch) * s + v] = smp.swe[v * c + ch];
      }
    }
  }
  return {std::move(xb), std::move(xe)};
}

std::vector<double> positive_probabilities(const Tensor<float>& logits) {
  std::vector<double> out(logits.dim(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double z0 = logits[2 * i], z1 = logits[2 * i + 1];
    out[i] = 1.0 / (1.0 + std::exp(z0 - z1));
  }
  return out;
}

double predict_proba(const Model<float>& model, const videodata::TrusSample& sample) {
  const videodata::TrusSample* one[] = {&sample};
  const auto [xb, xe] = to_batch(one);
  return positive_probabilities(model.forward(xb, xe).logits)[0];
}

}  // namespace trus::net
