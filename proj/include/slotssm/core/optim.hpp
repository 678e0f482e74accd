#pragma once

#include <cmath>
#include <vector>

#include "slotssm/core/tensor.hpp"

namespace slotssm {

// Decoupled-weight-decay Adam. Moments live here, shape-matched to their
// parameters; step counter increments once per step() across all params.
template <typename T>
class AdamW {
 public:
  struct Hyper {
    T lr = T(8e-4);
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T weight_decay = T(0.1);
  };

  AdamW(std::vector<Tensor<T>*> params, Hyper hp) : params_(std::move(params)), hp_(hp) {
    for (auto* p : params_) {
      m_.emplace_back(static_cast<size_t>(p->numel()), T(0));
      v_.emplace_back(static_cast<size_t>(p->numel()), T(0));
    }
  }

  int64_t step_count() const { return step_; }
  const Hyper& hyper() const { return hp_; }

  // Clips ALL parameter grads jointly to the given global L2 norm. Returns the
  // pre-clip norm.
  T clip_global_norm(T max_norm) {
    double sq = 0;
    for (auto* p : params_) {
      if (!p->has_grad()) continue;
      for (T g : p->grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    T norm = static_cast<T>(std::sqrt(sq));
    if (norm > max_norm && norm > T(0)) {
      T scale = max_norm / norm;
      for (auto* p : params_) {
        if (!p->has_grad()) continue;
        for (auto& g : p->grad_buf()) g *= scale;
      }
    }
    return norm;
  }

  void step() {
    ++step_;
    T bc1 = T(1) - std::pow(hp_.beta1, static_cast<T>(step_));
    T bc2 = T(1) - std::pow(hp_.beta2, static_cast<T>(step_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      Tensor<T>& p = *params_[pi];
      auto vals = p.mutable_data();
      auto& m = m_[pi];
      auto& v = v_[pi];
      if (m.size() != static_cast<size_t>(p.numel()))
        fail("adamw: moment shape does not match parameter ", shape_str(p.shape()));
      const T* g = nullptr;
      if (p.has_grad()) g = p.grad().data();
      for (int64_t i = 0; i < p.numel(); ++i) {
        T gi = g ? g[i] : T(0);
        if (!std::isfinite(gi)) fail("adamw: non-finite gradient at parameter ", pi);
        m[static_cast<size_t>(i)] = hp_.beta1 * m[static_cast<size_t>(i)] + (T(1) - hp_.beta1) * gi;
        v[static_cast<size_t>(i)] = hp_.beta2 * v[static_cast<size_t>(i)] + (T(1) - hp_.beta2) * gi * gi;
        T mhat = m[static_cast<size_t>(i)] / bc1;
        T vhat = v[static_cast<size_t>(i)] / bc2;
        vals[i] -= hp_.lr * (mhat / (std::sqrt(vhat) + hp_.eps) + hp_.weight_decay * vals[i]);
      }
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  // moment access for checkpointing
  std::vector<T>& moment1(size_t i) { return m_[i]; }
  std::vector<T>& moment2(size_t i) { return v_[i]; }
  size_t size() const { return params_.size(); }
  void set_step_count(int64_t s) { step_ = s; }

 private:
  std::vector<Tensor<T>*> params_;
  Hyper hp_;
  std::vector<std::vector<T>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace slotssm
