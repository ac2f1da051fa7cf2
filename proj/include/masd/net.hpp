#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "masd/errors.hpp"
#include "masd/ops.hpp"
#include "masd/rng.hpp"
#include "masd/tensor.hpp"

// Classifier encoder and saliency decoder.
//
// Encoder: stem conv, then num_blocks dense blocks. Each dense block runs
// block_layers conv/bn/relu units producing `growth` channels and concatenates
// them onto its input. Blocks are joined by 1x1 transitions that halve the
// width and average-pool by two; the transition after the last block narrows
// to head_width instead. A global average pool and a dense unit produce one
// probability per sample.
//
// Decoder: starts from the coarsest block output, then per block upsamples by
// two, concatenates the matching encoder block output, and applies one
// conv/bn/relu. A 1x1 conv plus sigmoid turns the finest map into a mask.

namespace masd {

using ParamSet = std::map<std::string, Tensor>;

struct EncoderConfig {
  std::size_t in_channels = 1;
  std::size_t stem_width = 8;
  std::size_t growth = 8;
  std::size_t block_layers = 2;
  std::size_t num_blocks = 4;
  std::size_t head_width = 16;

  void validate() const {
    if (!in_channels || !stem_width || !growth || !block_layers || !num_blocks || !head_width)
      throw ConfigError("encoder config: widths and counts must all be positive");
    if (num_blocks >= 16) throw ConfigError("encoder config: num_blocks unreasonably large");
  }

  // total spatial downscale in front of the head (one pool per block)
  std::size_t pool_factor() const { return std::size_t(1) << num_blocks; }

  std::size_t block_entry_width(std::size_t block) const {
    std::size_t w = stem_width;
    for (std::size_t k = 0; k < block; ++k) w = (w + block_layers * growth) / 2;
    return w;
  }
  std::size_t block_exit_width(std::size_t block) const {
    return block_entry_width(block) + block_layers * growth;
  }
  std::size_t transition_width(std::size_t block) const {
    return block + 1 == num_blocks ? head_width : block_exit_width(block) / 2;
  }
};

struct DecoderConfig {
  std::vector<std::size_t> widths = {24, 16, 12, 8};

  void validate(const EncoderConfig& enc) const {
    if (widths.size() != enc.num_blocks)
      throw ConfigError("decoder config: needs one width per encoder block");
    for (std::size_t w : widths)
      if (!w) throw ConfigError("decoder config: widths must be positive");
  }

  // channels entering decoder conv `block`: previous decoder width plus the
  // mirrored encoder block output (the first block has no skip)
  std::size_t conv_in_width(std::size_t block, const EncoderConfig& enc) const {
    if (block == 0) return enc.block_exit_width(enc.num_blocks - 1);
    return widths[block - 1] + enc.block_exit_width(enc.num_blocks - 1 - block);
  }
};

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

struct ParamSpec {
  std::string name;
  Shape shape;
  std::size_t fan_in = 0;  // 0 means constant init with `fill`
  float fill = 0.0f;
  bool state = false;  // running statistic: saved, never trained
};

namespace detail {

inline void conv_unit_specs(std::vector<ParamSpec>& out, const std::string& prefix,
                            std::size_t cin, std::size_t cout, std::size_t k) {
  out.push_back({prefix + ".conv.w", {cout, cin, k, k}, cin * k * k, 0.0f, false});
  out.push_back({prefix + ".conv.b", {cout}, 0, 0.0f, false});
  out.push_back({prefix + ".bn.gamma", {cout}, 0, 1.0f, false});
  out.push_back({prefix + ".bn.beta", {cout}, 0, 0.0f, false});
  out.push_back({prefix + ".bn.rmean", {cout}, 0, 0.0f, true});
  out.push_back({prefix + ".bn.rvar", {cout}, 0, 1.0f, true});
}

}  // namespace detail

inline std::vector<ParamSpec> encoder_param_specs(const EncoderConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  detail::conv_unit_specs(specs, "enc.stem", cfg.in_channels, cfg.stem_width, 3);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    std::size_t w = cfg.block_entry_width(b);
    for (std::size_t l = 0; l < cfg.block_layers; ++l) {
      detail::conv_unit_specs(
          specs, "enc.b" + std::to_string(b + 1) + ".l" + std::to_string(l + 1), w, cfg.growth, 3);
      w += cfg.growth;
    }
    detail::conv_unit_specs(specs, "enc.t" + std::to_string(b + 1), w, cfg.transition_width(b), 1);
  }
  specs.push_back({"enc.head.w", {cfg.head_width, 1}, cfg.head_width, 0.0f, false});
  specs.push_back({"enc.head.b", {1}, 0, 0.0f, false});
  return specs;
}

inline std::vector<ParamSpec> decoder_param_specs(const DecoderConfig& dcfg,
                                                  const EncoderConfig& ecfg) {
  dcfg.validate(ecfg);
  std::vector<ParamSpec> specs;
  for (std::size_t b = 0; b < dcfg.widths.size(); ++b)
    detail::conv_unit_specs(specs, "dec.b" + std::to_string(b + 1), dcfg.conv_in_width(b, ecfg),
                            dcfg.widths[b], 3);
  specs.push_back({"dec.head.w", {1, dcfg.widths.back(), 1, 1}, dcfg.widths.back(), 0.0f, false});
  specs.push_back({"dec.head.b", {1}, 0, 0.0f, false});
  return specs;
}

// He-style fan-in init for weights, fixed constants for the rest. Draw order
// follows spec order, so one seed pins every parameter.
inline ParamSet init_params(const std::vector<ParamSpec>& specs, Rng& rng) {
  ParamSet params;
  for (const auto& s : specs) {
    Tensor t;
    if (s.fan_in > 0) {
      float stddev = std::sqrt(2.0f / static_cast<float>(s.fan_in));
      std::vector<float> vals(shape_numel(s.shape));
      for (auto& v : vals) v = rng.normal(0.0f, stddev);
      t = Tensor::from_data(s.shape, std::move(vals), true);
    } else {
      t = Tensor::full(s.shape, s.fill, !s.state);
    }
    params.emplace(s.name, t);
  }
  return params;
}

inline const Tensor& param(const ParamSet& params, const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw ContractError("unknown parameter: " + name);
  return it->second;
}

inline bool is_state_param(const std::string& name) {
  return name.ends_with(".rmean") || name.ends_with(".rvar");
}

inline void set_params_trainable(ParamSet& params, const std::string& prefix, bool trainable) {
  for (auto& [name, t] : params) {
    if (!name.starts_with(prefix)) continue;
    t.set_requires_grad(trainable && !is_state_param(name));
  }
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor conv_bn_relu(Tape& tape, const ParamSet& p, const std::string& prefix,
                           const Tensor& x, Mode mode, std::size_t pad) {
  Tensor c = conv2d(tape, x, param(p, prefix + ".conv.w"), param(p, prefix + ".conv.b"), pad, 1);
  Tensor b = batchnorm(tape, c, param(p, prefix + ".bn.gamma"), param(p, prefix + ".bn.beta"),
                       mode, param(p, prefix + ".bn.rmean"), param(p, prefix + ".bn.rvar"));
  return relu(tape, b);
}

}  // namespace detail

struct EncoderResult {
  Tensor prob;                   // (N,) classifier probability
  std::vector<Tensor> features;  // dense block outputs, finest first
};

inline EncoderResult encoder_forward(Tape& tape, const EncoderConfig& cfg, const ParamSet& params,
                                     const Tensor& x, Mode mode) {
  cfg.validate();
  if (x.rank() != 4 || x.extent(1) != cfg.in_channels)
    throw ShapeError("encoder: input must be [N," + std::to_string(cfg.in_channels) +
                     ",H,W], got " + shape_str(x.shape()));
  std::size_t pf = cfg.pool_factor();
  if (x.extent(2) % pf != 0 || x.extent(3) % pf != 0 || x.extent(2) == 0 || x.extent(3) == 0)
    throw ShapeError("encoder: spatial extents of " + shape_str(x.shape()) +
                     " must be positive multiples of " + std::to_string(pf));

  EncoderResult result;
  Tensor cur = detail::conv_bn_relu(tape, params, "enc.stem", x, mode, 1);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    for (std::size_t l = 0; l < cfg.block_layers; ++l) {
      Tensor grown = detail::conv_bn_relu(
          tape, params, "enc.b" + std::to_string(b + 1) + ".l" + std::to_string(l + 1), cur, mode,
          1);
      cur = concat_channels(tape, cur, grown);
    }
    result.features.push_back(cur);
    cur = detail::conv_bn_relu(tape, params, "enc.t" + std::to_string(b + 1), cur, mode, 0);
    cur = avgpool(tape, cur, 2);
  }
  Tensor pooled = reduce_mean(tape, cur, {2, 3});  // (N, head_width)
  Tensor logit = dense(tape, pooled, param(params, "enc.head.w"), param(params, "enc.head.b"));
  Tensor prob = sigmoid(tape, logit);
  result.prob = reshape(tape, prob, {x.extent(0)});
  return result;
}

// features must come from an encoder_forward over the same configs.
inline Tensor decoder_forward(Tape& tape, const DecoderConfig& dcfg, const EncoderConfig& ecfg,
                              const ParamSet& params, const std::vector<Tensor>& features,
                              Mode mode) {
  dcfg.validate(ecfg);
  if (features.size() != ecfg.num_blocks)
    throw ContractError("decoder: expected " + std::to_string(ecfg.num_blocks) +
                        " encoder feature maps, got " + std::to_string(features.size()));
  Tensor cur = features.back();
  for (std::size_t b = 0; b < dcfg.widths.size(); ++b) {
    if (b > 0) {
      cur = upsample_nearest(tape, cur, 2);
      cur = concat_channels(tape, cur, features[ecfg.num_blocks - 1 - b]);
    }
    cur = detail::conv_bn_relu(tape, params, "dec.b" + std::to_string(b + 1), cur, mode, 1);
  }
  Tensor raw = conv2d(tape, cur, param(params, "dec.head.w"), param(params, "dec.head.b"), 0, 1);
  return sigmoid(tape, raw);  // (N,1,H,W)
}

}  // namespace masd
