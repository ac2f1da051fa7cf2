#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "masd/errors.hpp"
#include "masd/tape.hpp"
#include "masd/tensor.hpp"

namespace masd {

struct GradCheckReport {
  bool passed = false;
  std::size_t num_checked = 0;
  float max_rel_err = 0.0f;
  std::size_t worst_input = 0;    // index into the inputs vector
  std::size_t worst_element = 0;  // linear element within that input
  float worst_analytic = 0.0f;
  float worst_numeric = 0.0f;
};

// Compares analytic gradients against central differences for every element
// of every requires_grad input. `f` maps a fresh Tape to a scalar loss, must
// be deterministic (checked: two forward passes have to agree bit for bit)
// and free of side effects: batchnorm inside must run in eval mode or write
// its running statistics into buffers created inside f, so that nothing
// carries over from one evaluation to the next.
//
// Relative error uses a floored denominator: an f32 forward pass puts
// absolute noise of roughly ulp(loss)/2h (about 1e-4 at unit scale) into the
// difference quotient, so gradients smaller than the floor are compared
// against the floor instead of each other. Real gradient defects produce
// errors proportional to the gradient itself and still trip the tolerance.
template <typename F>
GradCheckReport gradient_check(F&& f, const std::vector<Tensor>& inputs, float h = 1e-3f,
                               float tol = 1e-2f) {
  constexpr float kDenomFloor = 0.05f;
  {
    Tape t1, t2;
    Tensor l1 = f(t1);
    Tensor l2 = f(t2);
    if (l1.numel() != 1) throw ContractError("gradient_check: loss must be scalar");
    if (!l1.bitwise_equal(l2))
      throw ContractError("gradient_check invalid: repeated forward passes disagree");
  }
  for (const Tensor& t : inputs) {
    Tensor handle = t;
    handle.clear_grad();
  }
  Tape tape;
  Tensor loss = f(tape);
  tape.backward(loss);
  std::vector<std::vector<float>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& in = inputs[i];
    if (!in.requires_grad()) continue;
    if (in.has_grad())
      analytic[i].assign(in.grad().begin(), in.grad().end());
    else
      analytic[i].assign(in.numel(), 0.0f);
  }

  auto eval = [&]() {
    Tape t;
    return static_cast<double>(f(t).value());
  };

  GradCheckReport rep;
  rep.passed = true;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor in = inputs[i];
    if (!in.requires_grad()) continue;
    auto vals = in.mut_data();
    for (std::size_t e = 0; e < vals.size(); ++e) {
      float keep = vals[e];
      vals[e] = keep + h;
      double lp = eval();
      vals[e] = keep - h;
      double lm = eval();
      vals[e] = keep;
      float fd = static_cast<float>((lp - lm) / (2.0 * static_cast<double>(h)));
      float an = analytic[i][e];
      float rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), kDenomFloor});
      ++rep.num_checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        rep.worst_input = i;
        rep.worst_element = e;
        rep.worst_analytic = an;
        rep.worst_numeric = fd;
      }
      if (rel > tol) rep.passed = false;
    }
  }
  return rep;
}

}  // namespace masd
