#pragma once

#include "slotssm/layers/nn.hpp"

namespace slotssm {

namespace detail {

// [B, S, D] -> [B*h, S, D/h]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int64_t heads) {
  int64_t b = x.dim(0), s = x.dim(1), d = x.dim(2);
  auto r = transpose(x.with_shape({b, s, heads, d / heads}), {0, 2, 1, 3});
  return r.with_shape({b * heads, s, d / heads});
}

// [B*h, S, D/h] -> [B, S, D]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x, int64_t heads) {
  int64_t bh = x.dim(0), s = x.dim(1), dh = x.dim(2);
  auto r = transpose(x.with_shape({bh / heads, heads, s, dh}), {0, 2, 1, 3});
  return r.with_shape({bh / heads, s, heads * dh});
}

}  // namespace detail

// Multi-head attention with softmax over keys. mask, if given, is an additive
// [Q, Kv] bias shared across batch and heads (use large negatives to forbid).
template <typename T>
struct Mha {
  int64_t heads = 4;
  LinearParams<T> wq, wk, wv, wo;

  Mha() = default;
  Mha(int64_t d, int64_t h, CounterRng& rng)
      : heads(h), wq(d, d, rng), wk(d, d, rng), wv(d, d, rng), wo(d, d, rng) {
    if (d % h) fail("mha: model dim ", d, " not divisible by heads ", h);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    wq.reg(r, p + ".wq");
    wk.reg(r, p + ".wk");
    wv.reg(r, p + ".wv");
    wo.reg(r, p + ".wo");
  }

  // q_in: [B, Q, D], kv_in: [B, Kv, D]. attn_out, if given, receives the
  // head-averaged attention map [B, Q, Kv] (detached).
  Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                    const Tensor<T>* mask = nullptr, Tensor<T>* attn_out = nullptr) const {
    int64_t b = q_in.dim(0), nq = q_in.dim(1), d = q_in.dim(2);
    int64_t dh = d / heads;
    auto q = detail::split_heads(wq.forward(q_in), heads);
    auto k = detail::split_heads(wk.forward(kv_in), heads);
    auto v = detail::split_heads(wv.forward(kv_in), heads);
    auto scores = mul_scalar(matmul(q, k, false, true), T(1) / std::sqrt(static_cast<T>(dh)));
    if (mask) scores = add(scores, *mask);
    auto attn = softmax(scores, -1);  // [B*h, Q, Kv]
    if (attn_out) {
      int64_t kv = kv_in.dim(1);
      Tensor<T> avg(Shape{b, nq, kv});
      const T* pa = attn.ptr();
      T* po = avg.ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < nq * kv; ++i) {
          T acc = T(0);
          for (int64_t h = 0; h < heads; ++h) acc += pa[(bi * heads + h) * nq * kv + i];
          po[bi * nq * kv + i] = acc / static_cast<T>(heads);
        }
      *attn_out = avg;
    }
    auto ctx = detail::merge_heads(matmul(attn, v), heads);
    return wo.forward(ctx);
  }
};

// Cross-attention with softmax over the queries followed by per-query
// renormalization over keys, inducing competition among queries for tokens:
//   A = softmax(QK^T / sqrt(D), axis=queries);  A_ij /= sum_j A_ij;  out = A V
// Queries may have a different width than keys/values; the value projection
// sets the output width. No output projection.
template <typename T>
struct InvertedAttention {
  int64_t heads = 4;
  LinearParams<T> wq, wk, wv;

  InvertedAttention() = default;
  InvertedAttention(int64_t d_q, int64_t d_kv, int64_t d_out, int64_t h, CounterRng& rng)
      : heads(h), wq(d_q, d_out, rng), wk(d_kv, d_out, rng), wv(d_kv, d_out, rng) {
    if (d_out % h) fail("inverted_attention: dim ", d_out, " not divisible by heads ", h);
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    wq.reg(r, p + ".wq");
    wk.reg(r, p + ".wk");
    wv.reg(r, p + ".wv");
  }

  Tensor<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                    Tensor<T>* attn_out = nullptr) const {
    int64_t b = q_in.dim(0), nq = q_in.dim(1);
    int64_t dout = wq.w.dim(1);
    int64_t dh = dout / heads;
    auto q = detail::split_heads(wq.forward(q_in), heads);
    auto k = detail::split_heads(wk.forward(kv_in), heads);
    auto v = detail::split_heads(wv.forward(kv_in), heads);
    auto scores = mul_scalar(matmul(q, k, false, true), T(1) / std::sqrt(static_cast<T>(dh)));
    auto attn = softmax(scores, 1);  // over queries: each key's column sums to 1
    auto rowsum = sum(attn, {2}, true);
    attn = div(attn, add_scalar(rowsum, T(1e-9)));
    if (attn_out) {
      int64_t kv = kv_in.dim(1);
      Tensor<T> avg(Shape{b, nq, kv});
      const T* pa = attn.ptr();
      T* po = avg.ptr();
      for (int64_t bi = 0; bi < b; ++bi)
        for (int64_t i = 0; i < nq * kv; ++i) {
          T acc = T(0);
          for (int64_t h = 0; h < heads; ++h) acc += pa[(bi * heads + h) * nq * kv + i];
          po[bi * nq * kv + i] = acc / static_cast<T>(heads);
        }
      *attn_out = avg;
    }
    return detail::merge_heads(matmul(attn, v), heads);
  }
};

}  // namespace slotssm
