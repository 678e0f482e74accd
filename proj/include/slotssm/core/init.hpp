#pragma once

#include "slotssm/core/rng.hpp"
#include "slotssm/core/tensor.hpp"

namespace slotssm {

template <typename T>
Tensor<T> rand_uniform(Shape shape, CounterRng& rng, T lo = T(-1), T hi = T(1)) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

template <typename T>
Tensor<T> rand_normal(Shape shape, CounterRng& rng, T stddev = T(1)) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.mutable_data()) v = static_cast<T>(rng.normal() * stddev);
  return t;
}

// fan-in scaled uniform, the default for linear/attention weights
template <typename T>
Tensor<T> init_linear_weight(int64_t fan_in, int64_t fan_out, CounterRng& rng) {
  T bound = T(1) / std::sqrt(static_cast<T>(fan_in));
  return rand_uniform<T>({fan_in, fan_out}, rng, -bound, bound);
}

}  // namespace slotssm
