#pragma once

#include "slotssm/layers/attention.hpp"

namespace slotssm {

// Two residual blocks applied per time step: self-attention across slots, then
// a per-slot MLP. Pre-norm. The only place slots exchange information.
template <typename T>
struct SlotMixer {
  LayerNormParams<T> ln_attn, ln_mlp;
  Mha<T> attn;
  MlpParams<T> mlp;

  SlotMixer() = default;
  SlotMixer(int64_t d, int64_t heads, int64_t mlp_hidden, CounterRng& rng)
      : ln_attn(d), ln_mlp(d), attn(d, heads, rng), mlp(d, mlp_hidden, rng) {}

  void reg(ParamRegistry<T>& r, const std::string& p) {
    ln_attn.reg(r, p + ".ln_attn");
    attn.reg(r, p + ".attn");
    ln_mlp.reg(r, p + ".ln_mlp");
    mlp.reg(r, p + ".mlp");
  }

  // y: [B, K, D] slots of one time step (fold batch*time upstream)
  Tensor<T> forward(Tensor<T> y) const {
    auto ny = ln_attn.forward(y);
    y = add(y, attn.forward(ny, ny));
    y = add(y, mlp.forward(ln_mlp.forward(y)));
    return y;
  }
};

}  // namespace slotssm
