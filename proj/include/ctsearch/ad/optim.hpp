#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ctsearch/ad/tape.hpp"

namespace ctsearch::ad {

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 0.0;  // L2 term added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, one slot per parameter in call order.
struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  long step = 0;
};

/// One bias-corrected Adam update. Parameters without a gradient entry are
/// treated as having a zero gradient (weight decay still applies).
inline void adam_step(std::span<Parameter* const> params, const Gradients& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (state.m.empty()) {
    for (const Parameter* p : params) {
      state.m.emplace_back(p->value.shape(), 0.0);
      state.v.emplace_back(p->value.shape(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw Error("adam state does not match the parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    const Tensor* g = grads.find(p);
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double gi = (g ? (*g)[i] : 0.0) + cfg.weight_decay * p.value[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      p.value[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
    }
  }
}

}  // namespace ctsearch::ad
