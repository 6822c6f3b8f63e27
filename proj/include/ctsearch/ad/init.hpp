#pragma once

#include <cmath>
#include <random>
#include <string>

#include "ctsearch/ad/tensor.hpp"

namespace ctsearch::ad {

/// Parameter with values drawn uniformly from [-1/sqrt(fan_in), 1/sqrt(fan_in)].
inline Parameter uniform_parameter(std::string name, Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in == 0 ? 1 : fan_in));
  std::uniform_real_distribution<double> d(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return Parameter{std::move(name), std::move(t)};
}

inline Parameter zero_parameter(std::string name, Shape shape) {
  return Parameter{std::move(name), Tensor(std::move(shape), 0.0)};
}

}  // namespace ctsearch::ad
