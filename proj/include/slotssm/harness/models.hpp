#pragma once

#include "slotssm/decoders/spatial_broadcast.hpp"
#include "slotssm/decoders/transformer_decoder.hpp"
#include "slotssm/harness/checkpoint.hpp"
#include "slotssm/harness/config.hpp"

namespace slotssm {

// Rearranges frames [B, T, H, W, C] (row-major scalars in [0,1]) into
// non-overlapping patch vectors [B, T, M, p*p*C], M = (H/p)*(W/p). Inputs are
// leaves, so this is plain data movement.
template <typename T>
Tensor<T> frames_to_patches(const std::vector<T>& frames, int64_t b, int64_t t, int64_t h,
                            int64_t w, int64_t c, int64_t p) {
  int64_t gh = h / p, gw = w / p, m = gh * gw, pv = p * p * c;
  Tensor<T> out(Shape{b, t, m, pv});
  T* po = out.ptr();
  const T* pf = frames.data();
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t ti = 0; ti < t; ++ti)
      for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
          T* slot = po + (((bi * t + ti) * m + gy * gw + gx)) * pv;
          for (int64_t py = 0; py < p; ++py)
            for (int64_t px = 0; px < p; ++px)
              for (int64_t ci = 0; ci < c; ++ci)
                slot[(py * p + px) * c + ci] =
                    pf[((((bi * t + ti) * h + gy * p + py) * w) + gx * p + px) * c + ci];
        }
  return out;
}

// MLP patch tokenizer with a learned spatial embedding per grid cell.
template <typename T>
struct PatchEmbed {
  int64_t patch_px = 0, channels = 1, d = 0, grid = 0;
  LinearParams<T> fc1, fc2;
  Tensor<T> pos;  // [M, D]

  PatchEmbed() = default;
  PatchEmbed(int64_t image_hw, int64_t p, int64_t c, int64_t d_, CounterRng& rng)
      : patch_px(p), channels(c), d(d_), grid(image_hw / p),
        fc1(p * p * c, d_, rng), fc2(d_, d_, rng),
        pos(rand_normal<T>({(image_hw / p) * (image_hw / p), d_}, rng, T(0.02))) {}

  void reg(ParamRegistry<T>& r, const std::string& p) {
    fc1.reg(r, p + ".fc1");
    fc2.reg(r, p + ".fc2");
    r.add(p + ".pos", pos);
  }

  // patch vectors [B, T, M, p*p*C] -> tokens [B, T, M, D]
  Tensor<T> forward(const Tensor<T>& patches) const {
    auto x = fc2.forward(silu(fc1.forward(patches)));
    return add(x, pos);
  }
};

// ---------------------------------------------------------------------------
// video prediction (teacher-forced next frame, BCE)
// ---------------------------------------------------------------------------

template <typename T>
struct VideoModel {
  ExperimentConfig cfg;
  PatchEmbed<T> embed;          // grayscale frames
  SlotStack<T> stack;
  TransformerDecoder<T> dec;    // 1 Bernoulli logit per pixel
  ParamRegistry<T> params;

  explicit VideoModel(const ExperimentConfig& c) : cfg(c) {
    CounterRng rng(c.seed, 10);
    embed = PatchEmbed<T>(c.image_hw, c.tok_patch, 1, c.d_model, rng);
    stack = SlotStack<T>(c.stack_config(), c.d_model, rng);
    dec = TransformerDecoder<T>(c.image_hw / c.dec_patch, c.dec_patch, 1, c.d_model, c.heads,
                                c.dec_layers, c.mlp_ratio * c.d_model, rng);
    embed.reg(params, "embed");
    stack.reg(params, "stack");
    dec.reg(params, "dec");
  }

  // frames: [B, T, H, W] scalars in [0,1] (raw vector, row-major)
  Tensor<T> tokens(const std::vector<T>& frames, int64_t b, int64_t t) const {
    auto patches = frames_to_patches(frames, b, t, cfg.image_hw, cfg.image_hw, 1, cfg.tok_patch);
    return embed.forward(patches);
  }

  // consumes frames 1..T-1, predicts 2..T
  Tensor<T> teacher_loss(const std::vector<T>& frames, int64_t b, int64_t t) const {
    auto toks = tokens(frames, b, t);
    auto inputs = slice(toks, 1, 0, t - 1);
    auto slots = stack.forward(inputs);
    int64_t k = slots.dim(2);
    auto logits = dec.forward(slots.with_shape({b * (t - 1), k, cfg.d_model}));
    // frames 2..T as patch vectors matching the decoder grid
    int64_t hw = cfg.image_hw;
    std::vector<T> shifted(static_cast<size_t>(b * (t - 1) * hw * hw));
    for (int64_t bi = 0; bi < b; ++bi)
      std::copy(frames.begin() + (bi * t + 1) * hw * hw, frames.begin() + (bi + 1) * t * hw * hw,
                shifted.begin() + bi * (t - 1) * hw * hw);
    auto tgt = frames_to_patches(shifted, b, t - 1, hw, hw, 1, cfg.dec_patch);
    return bce_with_logits(logits, tgt.with_shape(logits.shape()));
  }

  // logits for the next frame from current slots; [B, H, W] probabilities
  std::vector<T> decode_frame(const Tensor<T>& slots_bt) const {
    int64_t b = slots_bt.dim(0), k = slots_bt.dim(1);
    auto logits = sigmoid(dec.forward(slots_bt.with_shape({b, k, cfg.d_model})));
    // patch layout -> image layout
    int64_t p = cfg.dec_patch, g = cfg.image_hw / p, hw = cfg.image_hw;
    std::vector<T> out(static_cast<size_t>(b * hw * hw));
    const T* pl = logits.ptr();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t gy = 0; gy < g; ++gy)
        for (int64_t gx = 0; gx < g; ++gx)
          for (int64_t py = 0; py < p; ++py)
            for (int64_t px = 0; px < p; ++px)
              out[static_cast<size_t>((bi * hw + gy * p + py) * hw + gx * p + px)] =
                  pl[((bi * g * g) + gy * g + gx) * p * p + py * p + px];
    return out;
  }
};

// ---------------------------------------------------------------------------
// blinking color balls (patchified long context, 7-way pixel CE)
// ---------------------------------------------------------------------------

template <typename T>
struct BlinkingModel {
  ExperimentConfig cfg;
  int64_t patch_px = 0;  // pixels per sequence element
  int64_t sub_px = 0;    // tokenizer sub-patch
  int64_t m_tokens = 0;
  LinearParams<T> fc1, fc2;
  Tensor<T> sub_pos;    // [M, D]
  Tensor<T> frame_emb;  // [T-1, D] temporal
  Tensor<T> row_emb;    // [P, D]
  Tensor<T> col_emb;    // [P, D]
  SlotStack<T> stack;
  TransformerDecoder<T> dec;  // 7 classes per pixel
  ParamRegistry<T> params;

  explicit BlinkingModel(const ExperimentConfig& c) : cfg(c) {
    CounterRng rng(c.seed, 11);
    patch_px = c.image_hw / c.blink_p;
    sub_px = std::min<int64_t>(c.sub_patch, patch_px);
    int64_t sgrid = patch_px / sub_px;
    m_tokens = sgrid * sgrid;
    fc1 = LinearParams<T>(sub_px * sub_px * 3, c.d_model, rng);
    fc2 = LinearParams<T>(c.d_model, c.d_model, rng);
    sub_pos = rand_normal<T>({m_tokens, c.d_model}, rng, T(0.02));
    frame_emb = rand_normal<T>({c.blink_t - 1, c.d_model}, rng, T(0.02));
    row_emb = rand_normal<T>({c.blink_p, c.d_model}, rng, T(0.02));
    col_emb = rand_normal<T>({c.blink_p, c.d_model}, rng, T(0.02));
    stack = SlotStack<T>(c.stack_config(), c.d_model, rng);
    dec = TransformerDecoder<T>(c.image_hw / c.dec_patch, c.dec_patch, ColorPalette::kClasses,
                                c.d_model, c.heads, c.dec_layers, c.mlp_ratio * c.d_model, rng);
    fc1.reg(params, "tok.fc1");
    fc2.reg(params, "tok.fc2");
    params.add("tok.sub_pos", sub_pos);
    params.add("tok.frame_emb", frame_emb);
    params.add("tok.row_emb", row_emb);
    params.add("tok.col_emb", col_emb);
    stack.reg(params, "stack");
    dec.reg(params, "dec");
  }

  // context frames of a batch, [B, T-1, H, W, 3] in [0,1] -> tokens
  // [B, L, M, D] where L = (T-1) * P^2, sequence ordered frame-major then
  // row-major over the patch grid
  Tensor<T> tokens(const std::vector<T>& ctx, int64_t b) const {
    int64_t tc = cfg.blink_t - 1, p = cfg.blink_p, hw = cfg.image_hw;
    int64_t l = tc * p * p;
    int64_t sgrid = patch_px / sub_px;
    // gather sub-patch vectors: [B, L, M, sub^2*3]
    Tensor<T> vecs(Shape{b, l, m_tokens, sub_px * sub_px * 3});
    T* pv = vecs.ptr();
    const T* pf = ctx.data();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t ti = 0; ti < tc; ++ti)
        for (int64_t pr = 0; pr < p; ++pr)
          for (int64_t pc = 0; pc < p; ++pc) {
            int64_t li = (ti * p + pr) * p + pc;
            for (int64_t sy = 0; sy < sgrid; ++sy)
              for (int64_t sx = 0; sx < sgrid; ++sx) {
                T* dst = pv + (((bi * l + li) * m_tokens + sy * sgrid + sx)) * sub_px * sub_px * 3;
                for (int64_t y = 0; y < sub_px; ++y)
                  for (int64_t x = 0; x < sub_px; ++x)
                    for (int64_t c3 = 0; c3 < 3; ++c3)
                      dst[(y * sub_px + x) * 3 + c3] =
                          pf[((((bi * tc + ti) * hw + pr * patch_px + sy * sub_px + y) * hw) +
                              pc * patch_px + sx * sub_px + x) * 3 + c3];
              }
          }
    auto x = add(fc2.forward(silu(fc1.forward(vecs))), sub_pos);  // [B,L,M,D]
    // temporal and patch-position embeddings, one per sequence element
    IntArray fidx, ridx, cidx;
    fidx.shape = ridx.shape = cidx.shape = {l};
    fidx.data.resize(static_cast<size_t>(l));
    ridx.data.resize(static_cast<size_t>(l));
    cidx.data.resize(static_cast<size_t>(l));
    for (int64_t ti = 0; ti < tc; ++ti)
      for (int64_t pr = 0; pr < p; ++pr)
        for (int64_t pc = 0; pc < p; ++pc) {
          int64_t li = (ti * p + pr) * p + pc;
          fidx.data[static_cast<size_t>(li)] = static_cast<int32_t>(ti);
          ridx.data[static_cast<size_t>(li)] = static_cast<int32_t>(pr);
          cidx.data[static_cast<size_t>(li)] = static_cast<int32_t>(pc);
        }
    auto pos_seq = add(add(embedding(frame_emb, fidx), embedding(row_emb, ridx)),
                       embedding(col_emb, cidx));  // [L, D]
    return add(x, pos_seq.with_shape({l, 1, cfg.d_model}));
  }

  // target logits from the final sequence step
  Tensor<T> forward_logits(const std::vector<T>& ctx, int64_t b,
                           Tensor<T>* attn_map = nullptr) const {
    auto toks = tokens(ctx, b);
    auto slots = stack.forward(toks);  // [B, L, K, D]
    int64_t l = slots.dim(1), k = slots.dim(2);
    auto last = slice(slots, 1, l - 1, 1).with_shape({b, k, cfg.d_model});
    return dec.forward(last, attn_map);  // [B, n_pos, p^2*7]
  }

  Tensor<T> loss(const std::vector<T>& ctx, const IntArray& target_classes, int64_t b) const {
    auto logits = forward_logits(ctx, b);
    int64_t hw = cfg.image_hw;
    auto flat = logits.with_shape({b * hw * hw, ColorPalette::kClasses});
    return ce_with_logits(flat, target_classes);
  }

  // target classes [H*W] of one episode in the decoder's patch-major order
  IntArray target_patch_classes(const uint8_t* target_rgb) const {
    int64_t hw = cfg.image_hw, p = cfg.dec_patch, g = hw / p;
    auto pal = ColorPalette::standard();
    auto classes = quantize_colors(target_rgb, hw, hw, pal);
    IntArray out;
    out.shape = {hw * hw};
    out.data.resize(static_cast<size_t>(hw * hw));
    int64_t at = 0;
    for (int64_t gy = 0; gy < g; ++gy)
      for (int64_t gx = 0; gx < g; ++gx)
        for (int64_t py = 0; py < p; ++py)
          for (int64_t px = 0; px < p; ++px)
            out.data[static_cast<size_t>(at++)] =
                classes[static_cast<size_t>((gy * p + py) * hw + gx * p + px)];
    return out;
  }

  // argmax classes from logits, back in image layout [B, H, W]
  std::vector<int32_t> predict_classes(const Tensor<T>& logits) const {
    int64_t hw = cfg.image_hw, p = cfg.dec_patch, g = hw / p;
    int64_t b = logits.dim(0);
    std::vector<int32_t> out(static_cast<size_t>(b * hw * hw));
    const T* pl = logits.ptr();
    for (int64_t bi = 0; bi < b; ++bi)
      for (int64_t gy = 0; gy < g; ++gy)
        for (int64_t gx = 0; gx < g; ++gx)
          for (int64_t py = 0; py < p; ++py)
            for (int64_t px = 0; px < p; ++px) {
              const T* cell = pl + (((bi * g + gy) * g + gx) * p * p + py * p + px) *
                                       ColorPalette::kClasses;
              int32_t best = 0;
              for (int32_t c = 1; c < ColorPalette::kClasses; ++c)
                if (cell[c] > cell[best]) best = c;
              out[static_cast<size_t>((bi * hw + gy * p + py) * hw + gx * p + px)] = best;
            }
    return out;
  }
};

// ---------------------------------------------------------------------------
// object-centric reconstruction (inverted attention + spatial broadcast)
// ---------------------------------------------------------------------------

template <typename T>
struct OcModel {
  ExperimentConfig cfg;
  PatchEmbed<T> embed;  // RGB frames
  SlotStack<T> stack;
  SpatialBroadcastDecoder<T> dec;
  ParamRegistry<T> params;

  explicit OcModel(const ExperimentConfig& c) : cfg(c) {
    CounterRng rng(c.seed, 12);
    embed = PatchEmbed<T>(c.image_hw, c.tok_patch, 3, c.d_model, rng);
    stack = SlotStack<T>(c.stack_config(), c.d_model, rng);
    dec = SpatialBroadcastDecoder<T>(c.d_model, c.image_hw, rng, c.sbd_base, c.sbd_ch);
    embed.reg(params, "embed");
    stack.reg(params, "stack");
    dec.reg(params, "dec");
  }

  // frames: [B, T, H, W, 3] in [0,1]
  std::pair<Tensor<T>, DecodedFrame<T>> reconstruct(const std::vector<T>& frames, int64_t b,
                                                    int64_t t) const {
    auto patches = frames_to_patches(frames, b, t, cfg.image_hw, cfg.image_hw, 3, cfg.tok_patch);
    auto toks = embed.forward(patches);
    auto slots = stack.forward(toks);  // [B, T, K, D]
    int64_t k = slots.dim(2);
    auto decoded = dec.forward(slots.with_shape({b * t, k, cfg.d_model}));
    Tensor<T> target(Shape{b * t, cfg.image_hw, cfg.image_hw, 3},
                     std::vector<T>(frames.begin(), frames.end()));
    auto loss = mse_loss(decoded.composite, target);
    return {loss, decoded};
  }
};

// ---------------------------------------------------------------------------
// parameter <-> checkpoint plumbing shared by every model
// ---------------------------------------------------------------------------

template <typename T>
Checkpoint snapshot_params(const ParamRegistry<T>& reg, const std::string& config_text) {
  Checkpoint ck;
  ck.config_text = config_text;
  for (auto& [name, p] : reg.items) {
    CheckpointTensor t;
    t.shape = p->shape();
    t.data.assign(p->data().begin(), p->data().end());
    ck.tensors.emplace_back(name, std::move(t));
  }
  return ck;
}

template <typename T>
void restore_params(ParamRegistry<T>& reg, const Checkpoint& ck) {
  for (auto& [name, p] : reg.items) restore_tensor(*p, name, ck);
}

}  // namespace slotssm
