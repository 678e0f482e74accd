#pragma once

#include "slotssm/layers/slot_encoder.hpp"

namespace slotssm {

// Decodes a slot set into a grid of patch logits: learned positional queries
// self-attend, cross-attend to the slots, and pass through an MLP (3 layers,
// pre-norm residuals), then a linear head emits patch_px^2 * out_ch logits per
// position. The last layer's cross-attention map is exposed for slot
// visualization.
template <typename T>
struct TransformerDecoder {
  int64_t grid = 0;      // positions per side; n_pos = grid^2
  int64_t patch_px = 0;  // pixels per side per position
  int64_t out_ch = 1;    // logit channels per pixel
  Tensor<T> pos;         // [grid^2, D]
  std::vector<SlotEncoderLayer<T>> layers;
  LinearParams<T> head;

  TransformerDecoder() = default;
  TransformerDecoder(int64_t grid_, int64_t patch_px_, int64_t out_ch_, int64_t d, int64_t heads,
                     int64_t n_layers, int64_t mlp_hidden, CounterRng& rng)
      : grid(grid_), patch_px(patch_px_), out_ch(out_ch_),
        pos(rand_normal<T>({grid_ * grid_, d}, rng, T(0.02))),
        head(d, patch_px_ * patch_px_ * out_ch_, rng) {
    for (int64_t i = 0; i < n_layers; ++i) layers.emplace_back(d, heads, mlp_hidden, rng);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    r.add(p + ".pos", pos);
    for (size_t i = 0; i < layers.size(); ++i) layers[i].reg(r, p + ".l" + std::to_string(i));
    head.reg(r, p + ".head");
  }

  // slots: [B, K, D] -> logits [B, n_pos, patch_px^2*out_ch].
  // attn_map, if given, receives the final layer's head-averaged
  // cross-attention [B, n_pos, K] (detached).
  Tensor<T> forward(const Tensor<T>& slots, Tensor<T>* attn_map = nullptr) const {
    int64_t b = slots.dim(0), d = pos.dim(1), n_pos = pos.dim(0);
    Tensor<T> q = broadcast_to(pos.with_shape({1, n_pos, d}), {b, n_pos, d});
    for (size_t i = 0; i < layers.size(); ++i) {
      Tensor<T>* want = (attn_map && i + 1 == layers.size()) ? attn_map : nullptr;
      q = layers[i].forward(q, slots, want);
    }
    return head.forward(q);
  }
};

// argmax over slots of a decoder attention map [B, n_pos, K]
template <typename T>
IntArray attention_argmax(const Tensor<T>& attn) {
  int64_t b = attn.dim(0), n = attn.dim(1), k = attn.dim(2);
  IntArray out;
  out.shape = {b, n};
  out.data.resize(static_cast<size_t>(b * n));
  const T* p = attn.ptr();
  for (int64_t i = 0; i < b * n; ++i) {
    int32_t best = 0;
    for (int64_t j = 1; j < k; ++j)
      if (p[i * k + j] > p[i * k + best]) best = static_cast<int32_t>(j);
    out.data[static_cast<size_t>(i)] = best;
  }
  return out;
}

}  // namespace slotssm
