#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ctsearch/ad/tape.hpp"

namespace ctsearch::ad {

/// Builds a scalar loss on the given tape from the current parameter values.
using LossFn = std::function<Var(Tape&)>;

/// Max over all parameter coordinates of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// with numeric gradients from central differences of step eps. floor = 1e-6 * max(1, |f|).
inline double grad_check(const LossFn& f, const std::vector<Parameter*>& params, double eps = 1e-5) {
  if (!(eps > 0.0)) throw Error("grad_check needs eps > 0");
  Gradients analytic;
  double loss = 0.0;
  {
    Tape tape;
    const Var out = f(tape);
    loss = out.value()[0];
    analytic = tape.backward(out);
  }
  const double floor = 1e-6 * std::max(1.0, std::abs(loss));
  auto eval = [&]() {
    Tape tape(false);
    const double v = f(tape).value()[0];
    if (!std::isfinite(v)) throw Error("grad_check: loss is not finite at a perturbed point");
    return v;
  };
  double worst = 0.0;
  for (Parameter* p : params) {
    const Tensor* g = analytic.find(*p);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + eps;
      const double up = eval();
      p->value[i] = saved - eps;
      const double down = eval();
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = g ? (*g)[i] : 0.0;
      worst = std::max(worst, std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor}));
    }
  }
  return worst;
}

}  // namespace ctsearch::ad
