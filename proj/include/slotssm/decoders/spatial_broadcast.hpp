#pragma once

#include "slotssm/core/conv.hpp"
#include "slotssm/layers/nn.hpp"

namespace slotssm {

template <typename T>
struct DecodedFrame {
  Tensor<T> rgb;        // [B, K, H, W, 3]
  Tensor<T> alpha;      // [B, K, H, W] mixing logits
  Tensor<T> weights;    // [B, K, H, W] softmax of alpha over K
  Tensor<T> composite;  // [B, H, W, 3] alpha-weighted sum
};

// Spatial broadcast decoder: normalize each slot, tile it over a base grid,
// add a positional embedding, upsample through 5x5 stride-2 transposed convs
// to RGB + alpha logits, then softmax-composite over slots. The stage count
// follows the output resolution (base 8: 32 -> 2 stages, 64 -> 3, 128 -> 4).
template <typename T>
struct SpatialBroadcastDecoder {
  int64_t d_slot = 0, out_hw = 0, base = 8, mid_ch = 64;
  LayerNormParams<T> slot_ln;
  Tensor<T> pos;  // [base*base, D]
  std::vector<Tensor<T>> stage_w;  // [Cin, Cout, 5, 5]
  std::vector<Tensor<T>> stage_b;  // [Cout]

  SpatialBroadcastDecoder() = default;
  SpatialBroadcastDecoder(int64_t d, int64_t out_hw_, CounterRng& rng, int64_t base_ = 8,
                          int64_t mid = 64)
      : d_slot(d), out_hw(out_hw_), base(base_), mid_ch(mid), slot_ln(d),
        pos(rand_normal<T>({base_ * base_, d}, rng, T(0.02))) {
    int64_t hw = base;
    int64_t n_stages = 0;
    while (hw < out_hw) {
      hw *= 2;
      ++n_stages;
    }
    if (hw != out_hw)
      fail("sbd: resolution ", out_hw, " not reachable from base ", base, " by stride-2 stages");
    if (n_stages < 1) fail("sbd: output resolution must exceed the base grid");
    int64_t cin = d;
    for (int64_t i = 0; i < n_stages; ++i) {
      int64_t cout = (i + 1 == n_stages) ? 4 : mid_ch;  // final stage: RGB + alpha
      T bound = T(1) / std::sqrt(static_cast<T>(cin * 25));
      stage_w.push_back(rand_uniform<T>({cin, cout, 5, 5}, rng, -bound, bound));
      stage_b.push_back(Tensor<T>(Shape{cout}, T(0)));
      cin = cout;
    }
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    slot_ln.reg(r, p + ".slot_ln");
    r.add(p + ".pos", pos);
    for (size_t i = 0; i < stage_w.size(); ++i) {
      r.add(p + ".stage" + std::to_string(i) + ".w", stage_w[i]);
      r.add(p + ".stage" + std::to_string(i) + ".b", stage_b[i]);
    }
  }

  // slots: [B, K, D]
  DecodedFrame<T> forward(const Tensor<T>& slots) const {
    int64_t b = slots.dim(0), k = slots.dim(1);
    int64_t bk = b * k, g2 = base * base;
    auto normed = slot_ln.forward(slots).with_shape({bk, 1, d_slot});
    auto grid = add(broadcast_to(normed, {bk, g2, d_slot}), pos);  // [BK, g2, D]
    // NCHW for the conv stack
    auto x = transpose(grid, {0, 2, 1}).with_shape({bk, d_slot, base, base});
    for (size_t i = 0; i < stage_w.size(); ++i) {
      x = conv_transpose2d(x, stage_w[i], stage_b[i], 2, 2, 1);
      if (i + 1 < stage_w.size()) x = relu(x);
    }
    // x: [BK, 4, H, W]
    int64_t hw = out_hw;
    auto rgb_nchw = slice(x, 1, 0, 3);
    auto alpha_nchw = slice(x, 1, 3, 1);
    DecodedFrame<T> out;
    out.rgb = transpose(rgb_nchw.with_shape({b, k, 3, hw, hw}), {0, 1, 3, 4, 2});
    out.alpha = alpha_nchw.with_shape({b, k, hw, hw});
    out.weights = softmax(out.alpha, 1);
    auto weighted = mul(out.rgb, out.weights.with_shape({b, k, hw, hw, 1}));
    out.composite = sum(weighted, {1});  // [B, H, W, 3]
    return out;
  }
};

// per-pixel argmax over the alpha logits: [B, K, H, W] -> [B, H, W]
template <typename T>
IntArray alpha_argmax(const Tensor<T>& alpha) {
  int64_t b = alpha.dim(0), k = alpha.dim(1), h = alpha.dim(2), w = alpha.dim(3);
  IntArray out;
  out.shape = {b, h, w};
  out.data.resize(static_cast<size_t>(b * h * w));
  const T* p = alpha.ptr();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t i = 0; i < h * w; ++i) {
      int32_t best = 0;
      for (int64_t ki = 1; ki < k; ++ki)
        if (p[(bi * k + ki) * h * w + i] > p[(bi * k + best) * h * w + i])
          best = static_cast<int32_t>(ki);
      out.data[static_cast<size_t>(bi * h * w + i)] = best;
    }
  return out;
}

}  // namespace slotssm
