#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "masd/errors.hpp"
#include "masd/tape.hpp"
#include "masd/tensor.hpp"

// Differentiable tensor operations. Every op validates shapes, computes the
// forward value, and records a backward step on the tape when any input is
// on a gradient chain. Reductions and batch statistics accumulate in f64;
// storage stays f32.

namespace masd {

enum class Mode { train, eval };

namespace detail {

inline Tensor op_output(Shape shape, bool needs_grad) {
  Tensor t = Tensor::zeros(std::move(shape));
  t.impl()->needs_grad = needs_grad;
  return t;
}

inline bool wants(const std::shared_ptr<TensorImpl>& impl) { return impl->needs_grad; }

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace detail {

template <typename Fwd, typename Bwd>
Tensor elementwise_unary(Tape& tape, const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor out = op_output(x.shape(), x.needs_grad());
  auto xs = x.data();
  auto os = out.mut_data();
  for (std::size_t i = 0; i < xs.size(); ++i) os[i] = fwd(xs[i]);
  if (out.needs_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi, bwd]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += bwd(xi->data[i], oi->data[i]) * oi->grad[i];
    });
  }
  return out;
}

}  // namespace detail

inline Tensor relu(Tape& tape, const Tensor& x) {
  return detail::elementwise_unary(
      tape, x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [](float v, float) { return v > 0.0f ? 1.0f : 0.0f; });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return detail::elementwise_unary(
      tape, x, [](float v) { return static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))); },
      [](float, float o) { return o * (1.0f - o); });
}

// log(x + eps); callers guarantee x >= 0 so the argument stays positive.
inline Tensor log_op(Tape& tape, const Tensor& x, float eps = 1e-8f) {
  for (float v : x.data())
    if (v < 0.0f) throw ContractError("log_op: input must be non-negative");
  return detail::elementwise_unary(
      tape, x, [eps](float v) { return std::log(v + eps); },
      [eps](float v, float) { return 1.0f / (v + eps); });
}

// subgradient 0 at zero
inline Tensor abs_op(Tape& tape, const Tensor& x) {
  return detail::elementwise_unary(
      tape, x, [](float v) { return std::fabs(v); },
      [](float v, float) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
}

inline Tensor scale(Tape& tape, const Tensor& x, float factor) {
  return detail::elementwise_unary(
      tape, x, [factor](float v) { return factor * v; },
      [factor](float, float) { return factor; });
}

namespace detail {

enum class EwKind { add, sub, mul };

inline Tensor elementwise_binary(Tape& tape, const Tensor& a, const Tensor& b, EwKind kind,
                                 const char* name) {
  check_same_shape(a, b, name);  // no broadcasting by design
  Tensor out = op_output(a.shape(), a.needs_grad() || b.needs_grad());
  auto as = a.data();
  auto bs = b.data();
  auto os = out.mut_data();
  switch (kind) {
    case EwKind::add:
      for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] + bs[i];
      break;
    case EwKind::sub:
      for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] - bs[i];
      break;
    case EwKind::mul:
      for (std::size_t i = 0; i < as.size(); ++i) os[i] = as[i] * bs[i];
      break;
  }
  if (out.needs_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, kind]() {
      if (oi->grad.empty()) return;
      const auto& g = oi->grad;
      if (wants(ai)) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i)
          ai->grad[i] += (kind == EwKind::mul) ? g[i] * bi->data[i] : g[i];
      }
      if (wants(bi)) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
          float gi = g[i];
          if (kind == EwKind::mul)
            bi->grad[i] += gi * ai->data[i];
          else if (kind == EwKind::sub)
            bi->grad[i] -= gi;
          else
            bi->grad[i] += gi;
        }
      }
    });
  }
  return out;
}

}  // namespace detail

inline Tensor ew_add(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(tape, a, b, detail::EwKind::add, "ew_add");
}
inline Tensor ew_sub(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(tape, a, b, detail::EwKind::sub, "ew_sub");
}
inline Tensor ew_mul(Tape& tape, const Tensor& a, const Tensor& b) {
  return detail::elementwise_binary(tape, a, b, detail::EwKind::mul, "ew_mul");
}

// ---------------------------------------------------------------------------
// shape plumbing
// ---------------------------------------------------------------------------

inline Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw ShapeError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
                     " changes element count");
  Tensor out = detail::op_output(std::move(new_shape), x.needs_grad());
  std::copy(x.data().begin(), x.data().end(), out.mut_data().begin());
  if (out.needs_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += oi->grad[i];
    });
  }
  return out;
}

inline Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4)
    throw ShapeError("concat_channels: expects rank-4 [N,C,H,W] tensors");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw ShapeError("concat_channels: " + shape_str(sa) + " vs " + shape_str(sb) +
                     " differ outside the channel axis");
  std::size_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
  Tensor out = detail::op_output({n, ca + cb, sa[2], sa[3]}, a.needs_grad() || b.needs_grad());
  auto os = out.mut_data();
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t in = 0; in < n; ++in) {
    std::copy_n(as.begin() + in * ca * hw, ca * hw, os.begin() + in * (ca + cb) * hw);
    std::copy_n(bs.begin() + in * cb * hw, cb * hw, os.begin() + (in * (ca + cb) + ca) * hw);
  }
  if (out.needs_grad()) {
    auto ai = a.impl();
    auto bi = b.impl();
    auto oi = out.impl();
    tape.record([ai, bi, oi, n, ca, cb, hw]() {
      if (oi->grad.empty()) return;
      for (std::size_t in = 0; in < n; ++in) {
        if (detail::wants(ai)) {
          ai->ensure_grad();
          for (std::size_t i = 0; i < ca * hw; ++i)
            ai->grad[in * ca * hw + i] += oi->grad[in * (ca + cb) * hw + i];
        }
        if (detail::wants(bi)) {
          bi->ensure_grad();
          for (std::size_t i = 0; i < cb * hw; ++i)
            bi->grad[in * cb * hw + i] += oi->grad[(in * (ca + cb) + ca) * hw + i];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_axes(const Shape& shape, const std::vector<std::size_t>& axes) {
  for (std::size_t i = 0; i < axes.size(); ++i) {
    if (axes[i] >= shape.size()) throw ShapeError("reduce: axis out of range");
    if (i > 0 && axes[i] <= axes[i - 1]) throw ShapeError("reduce: axes must be strictly increasing");
  }
}

// Per input linear index, the linear index of its reduction cell.
struct ReduceMap {
  Shape in_shape;
  std::vector<bool> reduced;
  Shape out_shape;

  ReduceMap(const Shape& shape, const std::vector<std::size_t>& axes)
      : in_shape(shape), reduced(shape.size(), false) {
    for (std::size_t a : axes) reduced[a] = true;
    for (std::size_t d = 0; d < shape.size(); ++d)
      if (!reduced[d]) out_shape.push_back(shape[d]);
  }

  std::size_t out_index(std::size_t in_linear) const {
    std::size_t out = 0;
    // walk dims outermost-first, accumulating the non-reduced coordinates
    std::size_t rem = in_linear;
    std::size_t stride = 1;
    for (std::size_t d = 0; d < in_shape.size(); ++d) stride *= in_shape[d];
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
      stride /= in_shape[d];
      std::size_t coord = rem / stride;
      rem %= stride;
      if (!reduced[d]) out = out * in_shape[d] + coord;
    }
    return out;
  }
};

inline Tensor reduce_impl(Tape& tape, const Tensor& x, const std::vector<std::size_t>& axes,
                          bool mean) {
  validate_axes(x.shape(), axes);
  ReduceMap map(x.shape(), axes);
  std::size_t out_n = shape_numel(map.out_shape);
  std::size_t count = x.numel() / std::max<std::size_t>(out_n, 1);
  std::vector<double> acc(out_n, 0.0);
  auto xs = x.data();
  for (std::size_t i = 0; i < xs.size(); ++i) acc[map.out_index(i)] += xs[i];
  Tensor out = op_output(map.out_shape, x.needs_grad());
  auto os = out.mut_data();
  for (std::size_t i = 0; i < out_n; ++i)
    os[i] = static_cast<float>(mean ? acc[i] / static_cast<double>(count) : acc[i]);
  if (out.needs_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    float inv = mean ? 1.0f / static_cast<float>(count) : 1.0f;
    tape.record([xi, oi, map, inv]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->data.size(); ++i)
        xi->grad[i] += oi->grad[map.out_index(i)] * inv;
    });
  }
  return out;
}

}  // namespace detail

inline Tensor reduce_sum(Tape& tape, const Tensor& x, const std::vector<std::size_t>& axes) {
  return detail::reduce_impl(tape, x, axes, false);
}

inline Tensor reduce_mean(Tape& tape, const Tensor& x, const std::vector<std::size_t>& axes) {
  return detail::reduce_impl(tape, x, axes, true);
}

inline std::vector<std::size_t> all_axes(const Tensor& x) {
  std::vector<std::size_t> axes(x.rank());
  for (std::size_t i = 0; i < axes.size(); ++i) axes[i] = i;
  return axes;
}

// ---------------------------------------------------------------------------
// conv2d: cross-correlation, zero padding
// ---------------------------------------------------------------------------

inline Tensor conv2d(Tape& tape, const Tensor& input, const Tensor& kernel, const Tensor& bias,
                     std::size_t padding, std::size_t stride) {
  if (input.rank() != 4) throw ShapeError("conv2d: input must be [N,C,H,W], got " + shape_str(input.shape()));
  if (kernel.rank() != 4) throw ShapeError("conv2d: kernel must be [F,C,kh,kw], got " + shape_str(kernel.shape()));
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  std::size_t N = is[0], C = is[1], H = is[2], W = is[3];
  std::size_t F = ks[0], KH = ks[2], KW = ks[3];
  if (ks[1] != C)
    throw ShapeError("conv2d: kernel expects " + std::to_string(ks[1]) + " input channels, input has " +
                     std::to_string(C));
  if (KH % 2 == 0 || KW % 2 == 0) throw ConfigError("conv2d: kernel extents must be odd");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (bias.rank() != 1 || bias.extent(0) != F)
    throw ShapeError("conv2d: bias must be [F] with F=" + std::to_string(F));
  if (H + 2 * padding < KH || W + 2 * padding < KW)
    throw ShapeError("conv2d: kernel larger than padded input");
  if ((H + 2 * padding - KH) % stride != 0 || (W + 2 * padding - KW) % stride != 0)
    throw ShapeError("conv2d: padded extent minus kernel not divisible by stride");
  std::size_t Ho = (H + 2 * padding - KH) / stride + 1;
  std::size_t Wo = (W + 2 * padding - KW) / stride + 1;

  bool needs = input.needs_grad() || kernel.needs_grad() || bias.needs_grad();
  Tensor out = detail::op_output({N, F, Ho, Wo}, needs);
  const float* in = input.data().data();
  const float* ker = kernel.data().data();
  const float* bs = bias.data().data();
  float* op = out.mut_data().data();
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);

  std::vector<double> acc(Ho * Wo);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t f = 0; f < F; ++f) {
      std::fill(acc.begin(), acc.end(), static_cast<double>(bs[f]));
      for (std::size_t c = 0; c < C; ++c) {
        const float* inp = in + (n * C + c) * H * W;
        const float* kp = ker + (f * C + c) * KH * KW;
        for (std::size_t kh = 0; kh < KH; ++kh) {
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
            if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
            const float* inrow = inp + static_cast<std::size_t>(ih) * W;
            double* accrow = acc.data() + oh * Wo;
            for (std::size_t kw = 0; kw < KW; ++kw) {
              float kv = kp[kh * KW + kw];
              if (kv == 0.0f) continue;
              // ow range keeping iw = ow*stride + kw - pad inside [0, W)
              std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw) - pad;
              std::size_t lo = off >= 0 ? 0
                                        : (static_cast<std::size_t>(-off) + stride - 1) / stride;
              std::size_t hi = Wo;
              while (hi > lo && static_cast<std::ptrdiff_t>((hi - 1) * stride) + off >=
                                    static_cast<std::ptrdiff_t>(W))
                --hi;
              for (std::size_t ow = lo; ow < hi; ++ow)
                accrow[ow] += static_cast<double>(kv) *
                              inrow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ow * stride) + off)];
            }
          }
        }
      }
      float* orow = op + (n * F + f) * Ho * Wo;
      for (std::size_t i = 0; i < Ho * Wo; ++i) orow[i] = static_cast<float>(acc[i]);
    }
  }

  if (needs) {
    auto ii = input.impl();
    auto ki = kernel.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    tape.record([ii, ki, bi, oi, N, C, H, W, F, KH, KW, Ho, Wo, padding, stride]() {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(padding);
      if (detail::wants(bi)) {
        bi->ensure_grad();
        for (std::size_t f = 0; f < F; ++f) {
          double a = 0.0;
          for (std::size_t n = 0; n < N; ++n) {
            const float* grow = g + (n * F + f) * Ho * Wo;
            for (std::size_t i = 0; i < Ho * Wo; ++i) a += grow[i];
          }
          bi->grad[f] += static_cast<float>(a);
        }
      }
      if (detail::wants(ii)) {
        ii->ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f) {
            const float* grow0 = g + (n * F + f) * Ho * Wo;
            for (std::size_t c = 0; c < C; ++c) {
              float* dinp = ii->grad.data() + (n * C + c) * H * W;
              const float* kp = ki->data.data() + (f * C + c) * KH * KW;
              for (std::size_t kh = 0; kh < KH; ++kh)
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                  std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  float* dinrow = dinp + static_cast<std::size_t>(ih) * W;
                  const float* grow = grow0 + oh * Wo;
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    float kv = kp[kh * KW + kw];
                    if (kv == 0.0f) continue;
                    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw) - pad;
                    std::size_t lo = off >= 0 ? 0
                                              : (static_cast<std::size_t>(-off) + stride - 1) / stride;
                    std::size_t hi = Wo;
                    while (hi > lo && static_cast<std::ptrdiff_t>((hi - 1) * stride) + off >=
                                          static_cast<std::ptrdiff_t>(W))
                      --hi;
                    for (std::size_t ow = lo; ow < hi; ++ow)
                      dinrow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ow * stride) + off)] +=
                          kv * grow[ow];
                  }
                }
            }
          }
      }
      if (detail::wants(ki)) {
        ki->ensure_grad();
        std::vector<double> dk(F * C * KH * KW, 0.0);
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t f = 0; f < F; ++f) {
            const float* grow0 = g + (n * F + f) * Ho * Wo;
            for (std::size_t c = 0; c < C; ++c) {
              const float* inp = ii->data.data() + (n * C + c) * H * W;
              double* dkp = dk.data() + (f * C + c) * KH * KW;
              for (std::size_t kh = 0; kh < KH; ++kh)
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                  std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride + kh) - pad;
                  if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(H)) continue;
                  const float* inrow = inp + static_cast<std::size_t>(ih) * W;
                  const float* grow = grow0 + oh * Wo;
                  for (std::size_t kw = 0; kw < KW; ++kw) {
                    std::ptrdiff_t off = static_cast<std::ptrdiff_t>(kw) - pad;
                    std::size_t lo = off >= 0 ? 0
                                              : (static_cast<std::size_t>(-off) + stride - 1) / stride;
                    std::size_t hi = Wo;
                    while (hi > lo && static_cast<std::ptrdiff_t>((hi - 1) * stride) + off >=
                                          static_cast<std::ptrdiff_t>(W))
                      --hi;
                    double a = 0.0;
                    for (std::size_t ow = lo; ow < hi; ++ow)
                      a += static_cast<double>(grow[ow]) *
                           inrow[static_cast<std::size_t>(static_cast<std::ptrdiff_t>(ow * stride) + off)];
                    dkp[kh * KW + kw] += a;
                  }
                }
            }
          }
        for (std::size_t i = 0; i < dk.size(); ++i) ki->grad[i] += static_cast<float>(dk[i]);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

// running_mean / running_var are plain per-channel state tensors, mutated in
// train mode. Normalization uses biased batch variance.
inline Tensor batchnorm(Tape& tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                        Mode mode, Tensor running_mean, Tensor running_var, float eps = 1e-5f,
                        float momentum = 0.1f) {
  if (input.rank() < 2) throw ShapeError("batchnorm: input must be [N,C,...]");
  std::size_t N = input.extent(0), C = input.extent(1);
  std::size_t S = input.numel() / (N * C);  // spatial elements per channel
  auto check_c = [&](const Tensor& t, const char* name) {
    if (t.rank() != 1 || t.extent(0) != C)
      throw ShapeError(std::string("batchnorm: ") + name + " must be [C] with C=" + std::to_string(C));
  };
  check_c(gamma, "gamma");
  check_c(beta, "beta");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");
  std::size_t M = N * S;  // values per channel
  if (mode == Mode::train && M <= 1)
    throw ContractError("batchnorm: train mode needs more than one value per channel");

  const float* x = input.data().data();
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  if (mode == Mode::train) {
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const float* row = x + (n * C + c) * S;
        double m = 0.0;
        for (std::size_t s = 0; s < S; ++s) m += row[s];
        mean[c] += m;
      }
    for (std::size_t c = 0; c < C; ++c) mean[c] /= static_cast<double>(M);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const float* row = x + (n * C + c) * S;
        double v = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
          double d = row[s] - mean[c];
          v += d * d;
        }
        var[c] += v;
      }
    for (std::size_t c = 0; c < C; ++c) var[c] /= static_cast<double>(M);
    auto rm = running_mean.mut_data();
    auto rv = running_var.mut_data();
    for (std::size_t c = 0; c < C; ++c) {
      rm[c] = static_cast<float>((1.0 - momentum) * rm[c] + momentum * mean[c]);
      rv[c] = static_cast<float>((1.0 - momentum) * rv[c] + momentum * var[c]);
    }
  } else {
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = running_mean.data()[c];
      var[c] = running_var.data()[c];
    }
  }

  std::vector<float> invstd(C);
  for (std::size_t c = 0; c < C; ++c)
    invstd[c] = static_cast<float>(1.0 / std::sqrt(var[c] + static_cast<double>(eps)));

  bool needs = input.needs_grad() || gamma.needs_grad() || beta.needs_grad();
  Tensor out = detail::op_output(input.shape(), needs);
  float* o = out.mut_data().data();
  const float* gm = gamma.data().data();
  const float* bt = beta.data().data();
  // xhat kept for the backward pass
  auto xhat = std::make_shared<std::vector<float>>(input.numel());
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const float* row = x + (n * C + c) * S;
      float* orow = o + (n * C + c) * S;
      float* hrow = xhat->data() + (n * C + c) * S;
      float mu = static_cast<float>(mean[c]);
      for (std::size_t s = 0; s < S; ++s) {
        float h = (row[s] - mu) * invstd[c];
        hrow[s] = h;
        orow[s] = gm[c] * h + bt[c];
      }
    }

  if (needs) {
    auto ii = input.impl();
    auto gi = gamma.impl();
    auto bi = beta.impl();
    auto oi = out.impl();
    auto istd = std::make_shared<std::vector<float>>(invstd);
    tape.record([ii, gi, bi, oi, xhat, istd, N, C, S, mode]() {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      std::size_t M = N * S;
      std::vector<double> sum_g(C, 0.0), sum_gh(C, 0.0);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const float* grow = g + (n * C + c) * S;
          const float* hrow = xhat->data() + (n * C + c) * S;
          double sg = 0.0, sgh = 0.0;
          for (std::size_t s = 0; s < S; ++s) {
            sg += grow[s];
            sgh += static_cast<double>(grow[s]) * hrow[s];
          }
          sum_g[c] += sg;
          sum_gh[c] += sgh;
        }
      if (detail::wants(gi)) {
        gi->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) gi->grad[c] += static_cast<float>(sum_gh[c]);
      }
      if (detail::wants(bi)) {
        bi->ensure_grad();
        for (std::size_t c = 0; c < C; ++c) bi->grad[c] += static_cast<float>(sum_g[c]);
      }
      if (detail::wants(ii)) {
        ii->ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t c = 0; c < C; ++c) {
            const float* grow = g + (n * C + c) * S;
            const float* hrow = xhat->data() + (n * C + c) * S;
            float* drow = ii->grad.data() + (n * C + c) * S;
            float k = gi->data[c] * (*istd)[c];
            if (mode == Mode::train) {
              float mg = static_cast<float>(sum_g[c] / static_cast<double>(M));
              float mgh = static_cast<float>(sum_gh[c] / static_cast<double>(M));
              for (std::size_t s = 0; s < S; ++s)
                drow[s] += k * (grow[s] - mg - hrow[s] * mgh);
            } else {
              for (std::size_t s = 0; s < S; ++s) drow[s] += k * grow[s];
            }
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

// Each value replicated into a factor x factor block; gradient sums the block.
inline Tensor upsample_nearest(Tape& tape, const Tensor& x, std::size_t factor) {
  if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("upsample_nearest: input must be [N,C,H,W]");
  std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  std::size_t Ho = H * factor, Wo = W * factor;
  Tensor out = detail::op_output({N, C, Ho, Wo}, x.needs_grad());
  const float* in = x.data().data();
  float* o = out.mut_data().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* ip = in + nc * H * W;
    float* op = o + nc * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh) {
      const float* irow = ip + (oh / factor) * W;
      float* orow = op + oh * Wo;
      for (std::size_t ow = 0; ow < Wo; ++ow) orow[ow] = irow[ow / factor];
    }
  }
  if (out.needs_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi, N, C, H, W, factor]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      std::size_t Ho = H * factor, Wo = W * factor;
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        float* dip = xi->grad.data() + nc * H * W;
        const float* gop = oi->grad.data() + nc * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh) {
          float* drow = dip + (oh / factor) * W;
          const float* grow = gop + oh * Wo;
          for (std::size_t ow = 0; ow < Wo; ++ow) drow[ow / factor] += grow[ow];
        }
      }
    });
  }
  return out;
}

// Non-overlapping factor x factor mean pooling; extents must divide evenly.
inline Tensor avgpool(Tape& tape, const Tensor& x, std::size_t factor) {
  if (factor < 1) throw ConfigError("avgpool: factor must be >= 1");
  if (x.rank() != 4) throw ShapeError("avgpool: input must be [N,C,H,W]");
  std::size_t N = x.extent(0), C = x.extent(1), H = x.extent(2), W = x.extent(3);
  if (H % factor != 0 || W % factor != 0)
    throw ShapeError("avgpool: spatial extents " + shape_str(x.shape()) + " not divisible by " +
                     std::to_string(factor));
  std::size_t Ho = H / factor, Wo = W / factor;
  Tensor out = detail::op_output({N, C, Ho, Wo}, x.needs_grad());
  const float* in = x.data().data();
  float* o = out.mut_data().data();
  double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    const float* ip = in + nc * H * W;
    float* op = o + nc * Ho * Wo;
    for (std::size_t oh = 0; oh < Ho; ++oh)
      for (std::size_t ow = 0; ow < Wo; ++ow) {
        double a = 0.0;
        for (std::size_t fh = 0; fh < factor; ++fh) {
          const float* irow = ip + (oh * factor + fh) * W + ow * factor;
          for (std::size_t fw = 0; fw < factor; ++fw) a += irow[fw];
        }
        op[oh * Wo + ow] = static_cast<float>(a * inv);
      }
  }
  if (out.needs_grad()) {
    auto xi = x.impl();
    auto oi = out.impl();
    tape.record([xi, oi, N, C, H, W, factor]() {
      if (oi->grad.empty()) return;
      xi->ensure_grad();
      std::size_t Ho = H / factor, Wo = W / factor;
      float inv = 1.0f / static_cast<float>(factor * factor);
      for (std::size_t nc = 0; nc < N * C; ++nc) {
        float* dip = xi->grad.data() + nc * H * W;
        const float* gop = oi->grad.data() + nc * Ho * Wo;
        for (std::size_t oh = 0; oh < Ho; ++oh)
          for (std::size_t ow = 0; ow < Wo; ++ow) {
            float gv = gop[oh * Wo + ow] * inv;
            for (std::size_t fh = 0; fh < factor; ++fh) {
              float* drow = dip + (oh * factor + fh) * W + ow * factor;
              for (std::size_t fw = 0; fw < factor; ++fw) drow[fw] += gv;
            }
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

inline Tensor dense(Tape& tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2) throw ShapeError("dense: input must be [N,D]");
  if (weight.rank() != 2) throw ShapeError("dense: weight must be [D,K]");
  std::size_t N = input.extent(0), D = input.extent(1), K = weight.extent(1);
  if (weight.extent(0) != D)
    throw ShapeError("dense: weight rows " + std::to_string(weight.extent(0)) + " != input width " +
                     std::to_string(D));
  if (bias.rank() != 1 || bias.extent(0) != K) throw ShapeError("dense: bias must be [K]");
  bool needs = input.needs_grad() || weight.needs_grad() || bias.needs_grad();
  Tensor out = detail::op_output({N, K}, needs);
  const float* x = input.data().data();
  const float* w = weight.data().data();
  const float* b = bias.data().data();
  float* o = out.mut_data().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t k = 0; k < K; ++k) {
      double a = b[k];
      for (std::size_t d = 0; d < D; ++d) a += static_cast<double>(x[n * D + d]) * w[d * K + k];
      o[n * K + k] = static_cast<float>(a);
    }
  if (needs) {
    auto xi = input.impl();
    auto wi = weight.impl();
    auto bi = bias.impl();
    auto oi = out.impl();
    tape.record([xi, wi, bi, oi, N, D, K]() {
      if (oi->grad.empty()) return;
      const float* g = oi->grad.data();
      if (detail::wants(xi)) {
        xi->ensure_grad();
        for (std::size_t n = 0; n < N; ++n)
          for (std::size_t d = 0; d < D; ++d) {
            double a = 0.0;
            for (std::size_t k = 0; k < K; ++k)
              a += static_cast<double>(g[n * K + k]) * wi->data[d * K + k];
            xi->grad[n * D + d] += static_cast<float>(a);
          }
      }
      if (detail::wants(wi)) {
        wi->ensure_grad();
        for (std::size_t d = 0; d < D; ++d)
          for (std::size_t k = 0; k < K; ++k) {
            double a = 0.0;
            for (std::size_t n = 0; n < N; ++n)
              a += static_cast<double>(xi->data[n * D + d]) * g[n * K + k];
            wi->grad[d * K + k] += static_cast<float>(a);
          }
      }
      if (detail::wants(bi)) {
        bi->ensure_grad();
        for (std::size_t k = 0; k < K; ++k) {
          double a = 0.0;
          for (std::size_t n = 0; n < N; ++n) a += g[n * K + k];
          bi->grad[k] += static_cast<float>(a);
        }
      }
    });
  }
  return out;
}

}  // namespace masd
