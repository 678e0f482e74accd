#pragma once

#include <string>
#include <utility>
#include <vector>

#include "slotssm/core/init.hpp"
#include "slotssm/core/matmul.hpp"

namespace slotssm {

// Named views of every learnable tensor in a model, in registration order.
// The order is the contract for optimizer state and checkpoints.
template <typename T>
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor<T>*>> items;

  void add(const std::string& name, Tensor<T>& t) {
    t.set_requires_grad(true);
    items.emplace_back(name, &t);
  }

  std::vector<Tensor<T>*> tensors() const {
    std::vector<Tensor<T>*> v;
    v.reserve(items.size());
    for (auto& [n, p] : items) v.push_back(p);
    return v;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (auto& [name, p] : items) n += p->numel();
    return n;
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> g, b;

  LayerNormParams() = default;
  explicit LayerNormParams(int64_t d) : g(Shape{d}, T(1)), b(Shape{d}, T(0)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, g, b); }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".g", g);
    r.add(p + ".b", b);
  }
};

template <typename T>
struct LinearParams {
  Tensor<T> w, b;
  bool row_independent = false;

  LinearParams() = default;
  LinearParams(int64_t in, int64_t out, CounterRng& rng, bool bias = true, bool row_ind = false)
      : w(init_linear_weight<T>(in, out, rng)), row_independent(row_ind) {
    if (bias) b = Tensor<T>(Shape{out}, T(0));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, b, row_independent); }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".w", w);
    if (b.defined()) r.add(p + ".b", b);
  }
};

// two-layer MLP with SiLU
template <typename T>
struct MlpParams {
  LinearParams<T> fc1, fc2;

  MlpParams() = default;
  MlpParams(int64_t d, int64_t hidden, CounterRng& rng)
      : fc1(d, hidden, rng), fc2(hidden, d, rng) {}

  Tensor<T> forward(const Tensor<T>& x) const { return fc2.forward(silu(fc1.forward(x))); }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    fc1.reg(r, p + ".fc1");
    fc2.reg(r, p + ".fc2");
  }
};

}  // namespace slotssm
