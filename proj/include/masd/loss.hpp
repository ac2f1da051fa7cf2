#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "masd/errors.hpp"
#include "masd/net.hpp"
#include "masd/ops.hpp"

// Saliency training loss over a batch:
//
//   per sample:  l = lambda1*tv(m) + lambda2*area(m)
//                    - y*lambda3*log P(pos | m*x)
//                    + y*lambda4*P(pos | (1-m)*x)
//   batch loss:  mean over samples
//
// The y gate turns the classifier-coupled terms off for negative samples, so
// their masks are shaped by the tv/area pressure alone. Each term can also be
// disabled outright for ablations, which removes it from the value and the
// gradient and reports it as zero.

namespace masd {

struct LossWeights {
  float lambda1 = 0.1f;  // tv
  float lambda2 = 2.0f;  // area
  float lambda3 = 0.3f;  // preserve
  float lambda4 = 2.0f;  // destroy
  bool enable_tv = true;
  bool enable_area = true;
  bool enable_preserve = true;
  bool enable_destroy = true;
  // The destroy term is a raw probability by default. This switch swaps in
  // log(P + eps) so both classifier terms run on the same scale.
  bool destroy_log = false;

  void validate() const {
    if (lambda1 < 0.0f || lambda2 < 0.0f || lambda3 < 0.0f || lambda4 < 0.0f)
      throw ConfigError("loss weights: lambdas must be non-negative");
  }
};

struct LossBreakdown {
  // Term values before weighting. preserve/destroy are reported for every
  // sample regardless of its label; the gated_* fields are the label-gated
  // batch means that actually enter the total.
  float tv = 0.0f;
  float area = 0.0f;
  float preserve = 0.0f;
  float destroy = 0.0f;
  float total = 0.0f;
  float gated_preserve = 0.0f;
  float gated_destroy = 0.0f;

  // Rebuilds the total from the parts, mirroring the term order and f32
  // arithmetic of total_loss exactly.
  float recombine(const LossWeights& w) const {
    bool any = false;
    float acc = 0.0f;
    auto add = [&](float v) {
      acc = any ? acc + v : v;
      any = true;
    };
    if (w.enable_tv) add(w.lambda1 * tv);
    if (w.enable_area) add(w.lambda2 * area);
    if (w.enable_preserve) add(-w.lambda3 * gated_preserve);
    if (w.enable_destroy) add(w.lambda4 * gated_destroy);
    return acc;
  }
};

// Mask multiplied into every channel of the input.
inline Tensor mask_apply(Tape& tape, const Tensor& m, const Tensor& x) {
  if (m.rank() != 4 || m.extent(1) != 1) throw ShapeError("mask_apply: mask must be [N,1,H,W]");
  if (x.rank() != 4) throw ShapeError("mask_apply: input must be [N,C,H,W]");
  if (m.extent(0) != x.extent(0) || m.extent(2) != x.extent(2) || m.extent(3) != x.extent(3))
    throw ShapeError("mask_apply: mask " + shape_str(m.shape()) + " does not cover input " +
                     shape_str(x.shape()));
  std::size_t N = x.extent(0), C = x.extent(1), HW = x.extent(2) * x.extent(3);
  Tensor out = detail::op_output(x.shape(), m.needs_grad() || x.needs_grad());
  const float* mp = m.data().data();
  const float* xp = x.data().data();
  float* op = out.mut_data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const float* mrow = mp + n * HW;
      const float* xrow = xp + (n * C + c) * HW;
      float* orow = op + (n * C + c) * HW;
      for (std::size_t i = 0; i < HW; ++i) orow[i] = mrow[i] * xrow[i];
    }
  if (out.needs_grad()) {
    auto mi = m.impl();
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([mi, xi, oi, N, C, HW]() {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const float* grow = g + (n * C + c) * HW;
          if (detail::wants(mi)) {
            mi->ensure_grad();
            float* dm = mi->grad.data() + n * HW;
            const float* xrow = xi->data.data() + (n * C + c) * HW;
            for (std::size_t i = 0; i < HW; ++i) dm[i] += grow[i] * xrow[i];
          }
          if (detail::wants(xi)) {
            xi->ensure_grad();
            float* dx = xi->grad.data() + (n * C + c) * HW;
            const float* mrow = mi->data.data() + n * HW;
            for (std::size_t i = 0; i < HW; ++i) dx[i] += grow[i] * mrow[i];
          }
        }
    });
  }
  return out;
}

namespace detail {

// Anisotropic L1 total variation per sample, normalized by pixel count.
inline Tensor tv_per_sample(Tape& tape, const Tensor& m) {
  if (m.rank() != 4 || m.extent(1) != 1) throw ShapeError("tv_loss: mask must be [N,1,H,W]");
  std::size_t N = m.extent(0), H = m.extent(2), W = m.extent(3);
  if (H < 2 || W < 2)
    throw ContractError("tv_loss: mask spatial extents must be at least 2, got " +
                        shape_str(m.shape()));
  Tensor out = op_output({N}, m.needs_grad());
  const float* mp = m.data().data();
  float* op = out.mut_data().data();
  double inv = 1.0 / static_cast<double>(H * W);
  for (std::size_t n = 0; n < N; ++n) {
    const float* p = mp + n * H * W;
    double acc = 0.0;
    for (std::size_t h = 0; h + 1 < H; ++h)
      for (std::size_t w = 0; w < W; ++w) acc += std::fabs(p[(h + 1) * W + w] - p[h * W + w]);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w + 1 < W; ++w) acc += std::fabs(p[h * W + w + 1] - p[h * W + w]);
    op[n] = static_cast<float>(acc * inv);
  }
  if (out.needs_grad()) {
    auto mi = m.impl();
    auto oi = out.impl();
    tape.record([mi, oi, N, H, W]() {
      if (oi->grad.empty()) return;
      mi->ensure_grad();
      float inv = 1.0f / static_cast<float>(H * W);
      for (std::size_t n = 0; n < N; ++n) {
        float g = oi->grad[n] * inv;
        const float* p = mi->data.data() + n * H * W;
        float* d = mi->grad.data() + n * H * W;
        auto pair = [&](std::size_t lo, std::size_t hi) {
          float diff = p[hi] - p[lo];
          if (diff > 0.0f) {
            d[hi] += g;
            d[lo] -= g;
          } else if (diff < 0.0f) {
            d[hi] -= g;
            d[lo] += g;
          }
          // ties get subgradient zero
        };
        for (std::size_t h = 0; h + 1 < H; ++h)
          for (std::size_t w = 0; w < W; ++w) pair(h * W + w, (h + 1) * W + w);
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t w = 0; w + 1 < W; ++w) pair(h * W + w, h * W + w + 1);
      }
    });
  }
  return out;
}

inline Tensor area_per_sample(Tape& tape, const Tensor& m) {
  if (m.rank() != 4 || m.extent(1) != 1) throw ShapeError("area_loss: mask must be [N,1,H,W]");
  return reduce_mean(tape, m, {1, 2, 3});
}

// log P(pos | m*x) per sample
inline Tensor preserve_per_sample(Tape& tape, const Tensor& m, const Tensor& x,
                                  const EncoderConfig& ecfg, const ParamSet& encoder_params) {
  Tensor masked = mask_apply(tape, m, x);
  Tensor prob = encoder_forward(tape, ecfg, encoder_params, masked, Mode::eval).prob;
  return log_op(tape, prob);
}

// P(pos | (1-m)*x) per sample, optionally in log form
inline Tensor destroy_per_sample(Tape& tape, const Tensor& m, const Tensor& x,
                                 const EncoderConfig& ecfg, const ParamSet& encoder_params,
                                 bool log_form) {
  Tensor inverse = ew_sub(tape, Tensor::full(m.shape(), 1.0f), m);
  Tensor masked = mask_apply(tape, inverse, x);
  Tensor prob = encoder_forward(tape, ecfg, encoder_params, masked, Mode::eval).prob;
  return log_form ? log_op(tape, prob) : prob;
}

// batch mean with the same arithmetic as reduce_mean (f64 accumulate)
inline float mean_value(const Tensor& t) {
  double acc = 0.0;
  for (float v : t.data()) acc += v;
  return static_cast<float>(acc / static_cast<double>(t.numel()));
}

}  // namespace detail

inline Tensor tv_loss(Tape& tape, const Tensor& m) {
  return reduce_mean(tape, detail::tv_per_sample(tape, m), {0});
}

inline Tensor area_loss(Tape& tape, const Tensor& m) {
  return reduce_mean(tape, detail::area_per_sample(tape, m), {0});
}

inline Tensor preserve_loss(Tape& tape, const Tensor& m, const Tensor& x,
                            const EncoderConfig& ecfg, const ParamSet& encoder_params) {
  return reduce_mean(tape, detail::preserve_per_sample(tape, m, x, ecfg, encoder_params), {0});
}

inline Tensor destroy_loss(Tape& tape, const Tensor& m, const Tensor& x,
                           const EncoderConfig& ecfg, const ParamSet& encoder_params,
                           bool log_form = false) {
  return reduce_mean(tape,
                     detail::destroy_per_sample(tape, m, x, ecfg, encoder_params, log_form), {0});
}

struct LossResult {
  LossBreakdown breakdown;
  Tensor total;  // scalar, differentiable wrt the mask
};

// One label per sample, already binarized for the problem variant.
inline LossResult total_loss(Tape& tape, const Tensor& m, const Tensor& x,
                             const std::vector<int>& y, const LossWeights& w,
                             const EncoderConfig& ecfg, const ParamSet& encoder_params) {
  w.validate();
  if (m.rank() != 4 || m.extent(1) != 1) throw ShapeError("total_loss: mask must be [N,1,H,W]");
  std::size_t N = m.extent(0);
  if (y.size() != N)
    throw ContractError("total_loss: got " + std::to_string(y.size()) + " labels for " +
                        std::to_string(N) + " samples");
  for (int v : y)
    if (v != 0 && v != 1)
      throw ContractError("total_loss: labels must be binarized to {0,1}, got " +
                          std::to_string(v));
  std::vector<float> yf(y.begin(), y.end());
  Tensor y_gate = Tensor::from_data({N}, std::move(yf));

  LossResult res;
  Tensor total;
  bool any = false;
  auto add_term = [&](const Tensor& term) {
    total = any ? ew_add(tape, total, term) : term;
    any = true;
  };
  if (w.enable_tv) {
    Tensor mean = reduce_mean(tape, detail::tv_per_sample(tape, m), {0});
    res.breakdown.tv = mean.value();
    add_term(scale(tape, mean, w.lambda1));
  }
  if (w.enable_area) {
    Tensor mean = reduce_mean(tape, detail::area_per_sample(tape, m), {0});
    res.breakdown.area = mean.value();
    add_term(scale(tape, mean, w.lambda2));
  }
  if (w.enable_preserve) {
    Tensor per = detail::preserve_per_sample(tape, m, x, ecfg, encoder_params);
    res.breakdown.preserve = detail::mean_value(per);
    Tensor gated = reduce_mean(tape, ew_mul(tape, y_gate, per), {0});
    res.breakdown.gated_preserve = gated.value();
    add_term(scale(tape, gated, -w.lambda3));
  }
  if (w.enable_destroy) {
    Tensor per = detail::destroy_per_sample(tape, m, x, ecfg, encoder_params, w.destroy_log);
    res.breakdown.destroy = detail::mean_value(per);
    Tensor gated = reduce_mean(tape, ew_mul(tape, y_gate, per), {0});
    res.breakdown.gated_destroy = gated.value();
    add_term(scale(tape, gated, w.lambda4));
  }
  if (!any) total = Tensor::scalar(0.0f);
  res.breakdown.total = total.value();
  res.total = total;
  return res;
}

}  // namespace masd
