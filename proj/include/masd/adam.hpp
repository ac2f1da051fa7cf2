#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>

#include "masd/errors.hpp"
#include "masd/net.hpp"
#include "masd/tensor.hpp"

// Adam with bias correction over the trainable subset of a ParamSet.
// Gradients are read from each parameter's grad buffer, so callers run
// tape.backward(loss) first and clear grads after the step.

namespace masd {

struct AdamConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;

  void validate() const {
    if (!(lr >= 0.0f)) throw ConfigError("adam: learning rate must be non-negative");
    if (beta1 < 0.0f || beta1 >= 1.0f || beta2 < 0.0f || beta2 >= 1.0f)
      throw ConfigError("adam: betas must lie in [0,1)");
    if (eps <= 0.0f) throw ConfigError("adam: eps must be positive");
    if (weight_decay < 0.0f) throw ConfigError("adam: weight decay must be non-negative");
  }
};

struct AdamState {
  std::map<std::string, Tensor> m;  // first moment, one buffer per trainable param
  std::map<std::string, Tensor> v;  // second moment
  std::int64_t step = 0;            // completed (accepted) steps
};

inline AdamState init_adam(const ParamSet& params) {
  AdamState state;
  for (const auto& [name, t] : params)
    if (t.requires_grad()) {
      state.m.emplace(name, Tensor::zeros(t.shape()));
      state.v.emplace(name, Tensor::zeros(t.shape()));
    }
  return state;
}

// Applies one update to every trainable parameter. If any gradient holds a
// non-finite value the whole step is rejected: no parameter or state buffer
// changes and the call returns false.
inline bool adam_step(ParamSet& params, AdamState& state, const AdamConfig& cfg) {
  cfg.validate();
  for (const auto& [name, t] : params) {
    if (!t.requires_grad()) continue;
    if (state.m.find(name) == state.m.end())
      throw ContractError("adam_step: no optimizer state for parameter " + name);
    if (!t.has_grad())
      throw ContractError("adam_step: parameter " + name + " has no gradient");
    if (!state.m.at(name).same_shape(t) || !state.v.at(name).same_shape(t))
      throw ContractError("adam_step: state shape mismatch for parameter " + name);
    for (float g : t.grad())
      if (!std::isfinite(g)) return false;
    if (cfg.weight_decay != 0.0f)
      for (float w : t.data())
        if (!std::isfinite(w)) return false;
  }

  std::int64_t t_step = state.step + 1;
  double bias1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(t_step));
  double bias2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(t_step));

  for (auto& [name, p] : params) {
    if (!p.requires_grad()) continue;
    auto w = p.mut_data();
    auto g = p.grad();
    auto m = state.m.at(name).mut_data();
    auto v = state.v.at(name).mut_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      float gi = g[i] + cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0f - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0f - cfg.beta2) * gi * gi;
      float mhat = static_cast<float>(static_cast<double>(m[i]) / bias1);
      float vhat = static_cast<float>(static_cast<double>(v[i]) / bias2);
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
  state.step = t_step;
  return true;
}

}  // namespace masd
