#pragma once

#include "slotssm/layers/attention.hpp"

namespace slotssm {

// One encoder layer: self-attention among the queries, cross-attention from
// queries to tokens, MLP. Pre-norm with residuals on all three.
template <typename T>
struct SlotEncoderLayer {
  LayerNormParams<T> ln_self, ln_cross_q, ln_cross_kv, ln_mlp;
  Mha<T> self_attn, cross_attn;
  MlpParams<T> mlp;

  SlotEncoderLayer() = default;
  SlotEncoderLayer(int64_t d, int64_t heads, int64_t mlp_hidden, CounterRng& rng)
      : ln_self(d), ln_cross_q(d), ln_cross_kv(d), ln_mlp(d),
        self_attn(d, heads, rng), cross_attn(d, heads, rng), mlp(d, mlp_hidden, rng) {}

  void reg(ParamRegistry<T>& r, const std::string& p) {
    ln_self.reg(r, p + ".ln_self");
    self_attn.reg(r, p + ".self");
    ln_cross_q.reg(r, p + ".ln_cq");
    ln_cross_kv.reg(r, p + ".ln_ckv");
    cross_attn.reg(r, p + ".cross");
    ln_mlp.reg(r, p + ".ln_mlp");
    mlp.reg(r, p + ".mlp");
  }

  Tensor<T> forward(Tensor<T> q, const Tensor<T>& tokens,
                    Tensor<T>* cross_attn_map = nullptr) const {
    auto nq = ln_self.forward(q);
    q = add(q, self_attn.forward(nq, nq));
    q = add(q, cross_attn.forward(ln_cross_q.forward(q), ln_cross_kv.forward(tokens), nullptr,
                                  cross_attn_map));
    q = add(q, mlp.forward(ln_mlp.forward(q)));
    return q;
  }
};

// Extracts K slots from M tokens through learnable CLS queries and a small
// transformer, then projects to the slot width.
template <typename T>
struct SlotEncoder {
  Tensor<T> cls;  // [K, D_x], one distinct query per slot index
  std::vector<SlotEncoderLayer<T>> layers;
  LinearParams<T> proj;  // D_x -> D_s

  SlotEncoder() = default;
  SlotEncoder(int64_t k, int64_t d_x, int64_t d_s, int64_t heads, int64_t n_layers,
              int64_t mlp_hidden, CounterRng& rng)
      : cls(rand_normal<T>({k, d_x}, rng, T(0.02))), proj(d_x, d_s, rng) {
    for (int64_t i = 0; i < n_layers; ++i) layers.emplace_back(d_x, heads, mlp_hidden, rng);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".cls", cls);
    for (size_t i = 0; i < layers.size(); ++i) layers[i].reg(r, p + ".l" + std::to_string(i));
    proj.reg(r, p + ".proj");
  }

  // tokens: [B, M, D_x]; queries default to the CLS tokens, or pass existing
  // slot representations (e.g. when re-encoding across a slot-count change).
  Tensor<T> forward(const Tensor<T>& tokens, const Tensor<T>* queries = nullptr) const {
    if (tokens.rank() != 3) fail("slot_encoder: tokens must be [B,M,D], got ",
                                 shape_str(tokens.shape()));
    if (tokens.dim(1) < 1) fail("slot_encoder: zero tokens (M = 0)");
    int64_t b = tokens.dim(0), k = cls.dim(0), dx = cls.dim(1);
    Tensor<T> q = queries ? *queries : broadcast_to(cls.with_shape({1, k, dx}), {b, k, dx});
    for (const auto& layer : layers) q = layer.forward(q, tokens);
    return proj.forward(q);  // [B, K, D_s]
  }
};

}  // namespace slotssm
