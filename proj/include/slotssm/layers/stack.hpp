#pragma once

#include "slotssm/layers/gru.hpp"
#include "slotssm/layers/slot_encoder.hpp"
#include "slotssm/layers/slot_mixer.hpp"
#include "slotssm/ssm/mamba.hpp"

namespace slotssm {

enum class Variant { SlotSsm, OcSlotSsm, SingleState, SlotTransformer, SlotRnn };

inline Variant variant_from_string(const std::string& s) {
  if (s == "slotssm") return Variant::SlotSsm;
  if (s == "oc_slotssm") return Variant::OcSlotSsm;
  if (s == "single_state") return Variant::SingleState;
  if (s == "slot_transformer") return Variant::SlotTransformer;
  if (s == "slot_rnn") return Variant::SlotRnn;
  fail("unknown variant '", s, "'");
}

inline std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::SlotSsm: return "slotssm";
    case Variant::OcSlotSsm: return "oc_slotssm";
    case Variant::SingleState: return "single_state";
    case Variant::SlotTransformer: return "slot_transformer";
    default: return "slot_rnn";
  }
}

struct StackConfig {
  Variant variant = Variant::SlotSsm;
  int64_t layers = 2;
  int64_t slots = 6;                   // K for every layer unless overridden
  std::vector<int64_t> slots_per_layer;  // optional per-layer K_l
  int64_t d_model = 64;                // D_s (= token width for oc variant)
  int64_t heads = 4;
  int64_t n_state = 16;
  double expand = 1.25;
  int64_t conv_kw = 4;
  int64_t enc_layers = 3;
  int64_t mlp_ratio = 4;
  std::string encoder_placement = "first_layer_only";  // or "every_layer"
  ScanMethod scan = ScanMethod::Parallel;
  int64_t scan_chunk = 64;
  int64_t tk_cap = 6144;  // quadratic-cost guard for slot_transformer (T*K)
  int64_t t_max = 4096;   // temporal embedding capacity for slot_transformer

  std::vector<int64_t> k_layers() const {
    if (!slots_per_layer.empty()) return slots_per_layer;
    return std::vector<int64_t>(static_cast<size_t>(layers), slots);
  }

  void validate() const {
    if (layers < 1) fail("stack: layers must be >= 1");
    if (d_model % heads) fail("stack: d_model ", d_model, " not divisible by heads ", heads);
    auto ks = k_layers();
    if (static_cast<int64_t>(ks.size()) != layers)
      fail("stack: slots_per_layer length ", ks.size(), " vs layers ", layers);
    for (int64_t k : ks)
      if (k < 1) fail("stack: slot count must be >= 1");
    if (variant == Variant::SingleState)
      for (int64_t k : ks)
        if (k != 1) fail("stack: single_state requires K = 1 at every layer");
    if (variant == Variant::OcSlotSsm)
      for (int64_t k : ks)
        if (k != ks[0]) fail("stack: oc_slotssm requires equal K at every layer");
    if (encoder_placement != "first_layer_only" && encoder_placement != "every_layer")
      fail("stack: encoder_placement must be first_layer_only|every_layer");
  }
};

// Recurrent continuation state for the whole stack.
template <typename T>
struct StackState {
  std::vector<MambaState<T>> ssm;  // per layer
  std::vector<Tensor<T>> gru_h;    // per layer, [B*K, D]
};

// Applies one shared-weight block independently to each slot's time series:
// the block-diagonal transition. slots: [B, T, K, D] -> [B, T, K, D].
template <typename T>
Tensor<T> slot_ssm_forward(const MambaBlock<T>& blk, const Tensor<T>& slots,
                           MambaState<T>* state = nullptr) {
  if (slots.rank() != 4)
    fail("slot_ssm_forward: slots must be [B,T,K,D], got ", shape_str(slots.shape()));
  int64_t b = slots.dim(0), t = slots.dim(1), k = slots.dim(2), d = slots.dim(3);
  auto folded = transpose(slots, {0, 2, 1, 3}).with_shape({b * k, t, d});
  auto y = blk.forward(folded, state);
  return transpose(y.with_shape({b, k, t, d}), {0, 2, 1, 3});
}

template <typename T>
struct TransformerLayer {
  LayerNormParams<T> ln_attn, ln_mlp;
  Mha<T> attn;
  MlpParams<T> mlp;

  TransformerLayer() = default;
  TransformerLayer(int64_t d, int64_t heads, int64_t mlp_hidden, CounterRng& rng)
      : ln_attn(d), ln_mlp(d), attn(d, heads, rng), mlp(d, mlp_hidden, rng) {}

  void reg(ParamRegistry<T>& r, const std::string& p) {
    ln_attn.reg(r, p + ".ln_attn");
    attn.reg(r, p + ".attn");
    ln_mlp.reg(r, p + ".ln_mlp");
    mlp.reg(r, p + ".mlp");
  }

  Tensor<T> forward(Tensor<T> x, const Tensor<T>* mask) const {
    auto nx = ln_attn.forward(x);
    x = add(x, attn.forward(nx, nx, mask));
    x = add(x, mlp.forward(ln_mlp.forward(x)));
    return x;
  }
};

// The generic sequence-modeling stack. Per layer: (optional) slot encoder or
// inverted attention, per-slot temporal core (SSM / GRU / causal transformer),
// slot mixer. Slot processing shares weights across slots, so each slot's
// temporal core sees only its own history.
template <typename T>
struct SlotStack {
  StackConfig cfg;
  int64_t d_x = 0;  // token width at layer 0

  SlotEncoder<T> encoder;                       // layer-1 encoder (all but oc)
  std::vector<SlotEncoder<T>> re_encoders;      // per layer, built where needed
  std::vector<bool> re_encode_at;               // layer l uses re_encoders[l]
  Tensor<T> oc_cls;                             // [K, D_s] queries at layer 1 (oc)
  std::vector<InvertedAttention<T>> inv_attn;   // per layer (oc)
  std::vector<MambaBlock<T>> ssm;               // per layer (ssm variants)
  std::vector<GruCell<T>> gru;                  // per layer (slot_rnn)
  std::vector<SlotMixer<T>> mixer;              // per layer
  std::vector<TransformerLayer<T>> tr_layers;   // slot_transformer
  Tensor<T> temporal_emb;                       // [t_max, D] (slot_transformer)

  // instrumentation: when true, detached copies of each layer's inverted
  // attention keys/values are captured here (oc variant)
  mutable bool capture_inv_kv = false;
  mutable std::vector<Tensor<T>> debug_inv_kv;

  SlotStack() = default;

  SlotStack(StackConfig c, int64_t token_width, CounterRng& rng) : cfg(std::move(c)), d_x(token_width) {
    cfg.validate();
    auto ks = cfg.k_layers();
    int64_t d = cfg.d_model;
    int64_t mh = cfg.mlp_ratio * d;
    bool is_ssm = cfg.variant == Variant::SlotSsm || cfg.variant == Variant::SingleState;

    if (cfg.variant == Variant::OcSlotSsm) {
      if (d_x != d)
        fail("stack: oc_slotssm requires token width == d_model (got ", d_x, " vs ", d, ")");
      oc_cls = rand_normal<T>({ks[0], d}, rng, T(0.02));
      for (int64_t l = 0; l < cfg.layers; ++l)
        inv_attn.emplace_back(d, d, d, cfg.heads, rng);
    } else {
      encoder = SlotEncoder<T>(ks[0], d_x, d, cfg.heads, cfg.enc_layers, cfg.mlp_ratio * d_x, rng);
    }

    re_encode_at.assign(static_cast<size_t>(cfg.layers), false);
    re_encoders.resize(static_cast<size_t>(cfg.layers));
    if (cfg.variant != Variant::OcSlotSsm) {
      for (int64_t l = 1; l < cfg.layers; ++l) {
        bool k_changed = ks[static_cast<size_t>(l)] != ks[static_cast<size_t>(l - 1)];
        if (k_changed || cfg.encoder_placement == "every_layer") {
          // re-encode from the previous layer's slots: they act as keys/values
          re_encoders[static_cast<size_t>(l)] =
              SlotEncoder<T>(ks[static_cast<size_t>(l)], d, d, cfg.heads, cfg.enc_layers, mh, rng);
          re_encode_at[static_cast<size_t>(l)] = true;
        }
      }
    }

    for (int64_t l = 0; l < cfg.layers; ++l) {
      if (is_ssm || cfg.variant == Variant::OcSlotSsm) {
        ssm.emplace_back(d, cfg.n_state, rng, cfg.expand, cfg.conv_kw);
        ssm.back().method = cfg.scan;
        ssm.back().scan_chunk = cfg.scan_chunk;
        mixer.emplace_back(d, cfg.heads, mh, rng);
      } else if (cfg.variant == Variant::SlotRnn) {
        gru.emplace_back(d, d, rng);
        mixer.emplace_back(d, cfg.heads, mh, rng);
      } else {
        tr_layers.emplace_back(d, cfg.heads, mh, rng);
      }
    }
    if (cfg.variant == Variant::SlotTransformer)
      temporal_emb = rand_normal<T>({cfg.t_max, d}, rng, T(0.02));
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    if (cfg.variant == Variant::OcSlotSsm) {
      r.add(p + ".oc_cls", oc_cls);
      for (size_t l = 0; l < inv_attn.size(); ++l)
        inv_attn[l].reg(r, p + ".inv" + std::to_string(l));
    } else {
      encoder.reg(r, p + ".enc");
      for (size_t l = 0; l < re_encoders.size(); ++l)
        if (re_encode_at[l]) re_encoders[l].reg(r, p + ".reenc" + std::to_string(l));
    }
    for (size_t l = 0; l < ssm.size(); ++l) ssm[l].reg(r, p + ".ssm" + std::to_string(l));
    for (size_t l = 0; l < gru.size(); ++l) gru[l].reg(r, p + ".gru" + std::to_string(l));
    for (size_t l = 0; l < mixer.size(); ++l) mixer[l].reg(r, p + ".mix" + std::to_string(l));
    for (size_t l = 0; l < tr_layers.size(); ++l) tr_layers[l].reg(r, p + ".tr" + std::to_string(l));
    if (temporal_emb.defined()) r.add(p + ".temporal_emb", temporal_emb);
  }

  StackState<T> make_state(int64_t batch) const {
    StackState<T> st;
    if (!ssm.empty()) st.ssm.resize(static_cast<size_t>(cfg.layers));
    for (const auto& g : gru) st.gru_h.push_back(g.zero_state(batch * cfg.slots));
    return st;
  }

  // tokens: [B, T, M, D_x] -> final slots [B, T, K_L, D_s].
  // `state`, when given, carries per-layer recurrent state across calls
  // (t_offset is the absolute index of the first step, used for temporal
  // embeddings; the transformer variant has no recurrent mode).
  Tensor<T> forward(const Tensor<T>& tokens, StackState<T>* state = nullptr,
                    int64_t t_offset = 0) const {
    if (tokens.rank() != 4)
      fail("stack: tokens must be [B,T,M,D], got ", shape_str(tokens.shape()));
    int64_t b = tokens.dim(0), t = tokens.dim(1), m = tokens.dim(2);
    if (tokens.dim(3) != d_x) fail("stack: token width ", tokens.dim(3), " != ", d_x);
    int64_t d = cfg.d_model;
    auto ks = cfg.k_layers();

    auto tok_f = tokens.with_shape({b * t, m, d_x});

    auto fold_time = [&](const Tensor<T>& x, int64_t k) {  // [B,T,K,D] -> [B*K,T,D]
      return transpose(x, {0, 2, 1, 3}).with_shape({b * k, t, d});
    };
    auto unfold_time = [&](const Tensor<T>& x, int64_t k) {  // [B*K,T,D] -> [B,T,K,D]
      return transpose(x.with_shape({b, k, t, d}), {0, 2, 1, 3});
    };

    if (cfg.variant == Variant::SlotTransformer) {
      if (state) fail("slot_transformer: no recurrent mode; run on the full sequence");
      int64_t k = ks[0];
      if (t * k > cfg.tk_cap)
        fail("slot_transformer: T*K = ", t * k, " exceeds the configured cap ", cfg.tk_cap,
             " (quadratic attention cost); raise tk_cap explicitly to override");
      if (t_offset + t > cfg.t_max) fail("slot_transformer: sequence exceeds t_max");
      auto slots = encoder.forward(tok_f).with_shape({b, t, k, d});
      auto temb = slice(temporal_emb, 0, t_offset, t);
      slots = add(slots, temb.with_shape({t, 1, d}));
      auto x = slots.with_shape({b, t * k, d});
      // causal in time, unrestricted across slots within a step
      Tensor<T> mask(Shape{t * k, t * k});
      T* pm = mask.ptr();
      for (int64_t i = 0; i < t * k; ++i)
        for (int64_t j = 0; j < t * k; ++j)
          pm[i * t * k + j] = (j / k) <= (i / k) ? T(0) : T(-1e9);
      for (const auto& layer : tr_layers) x = layer.forward(x, &mask);
      return x.with_shape({b, t, k, d});
    }

    if (capture_inv_kv) debug_inv_kv.clear();

    Tensor<T> x;  // [B,T,K,D] output of previous layer
    for (int64_t l = 0; l < cfg.layers; ++l) {
      int64_t k = ks[static_cast<size_t>(l)];
      Tensor<T> s;
      if (cfg.variant == Variant::OcSlotSsm) {
        // queries: previous layer's slots (CLS at layer 1); keys/values: the
        // ORIGINAL layer-0 tokens (iterative refinement)
        Tensor<T> q = (l == 0)
                          ? broadcast_to(oc_cls.with_shape({1, k, d}), {b * t, k, d})
                          : x.with_shape({b * t, k, d});
        if (capture_inv_kv) debug_inv_kv.push_back(tok_f.detach());
        s = inv_attn[static_cast<size_t>(l)].forward(q, tok_f).with_shape({b, t, k, d});
      } else if (l == 0) {
        s = encoder.forward(tok_f).with_shape({b, t, k, d});
      } else if (re_encode_at[static_cast<size_t>(l)]) {
        // previous slots act as keys/values for the new queries
        auto kv = x.with_shape({b * t, ks[static_cast<size_t>(l - 1)], d});
        s = re_encoders[static_cast<size_t>(l)].forward(kv).with_shape({b, t, k, d});
      } else {
        s = x;  // same K: copy slots through
      }

      Tensor<T> y;
      if (!ssm.empty()) {
        MambaState<T>* ms = state ? &state->ssm[static_cast<size_t>(l)] : nullptr;
        y = slot_ssm_forward(ssm[static_cast<size_t>(l)], s, ms);
      } else {
        // slot_rnn: shared-weight GRU per slot; the recurrent chain stays
        // per-slot, mixing happens only on the layer output
        Tensor<T> h = (state && state->gru_h[static_cast<size_t>(l)].defined())
                          ? state->gru_h[static_cast<size_t>(l)]
                          : gru[static_cast<size_t>(l)].zero_state(b * k);
        y = unfold_time(gru[static_cast<size_t>(l)].forward_seq(fold_time(s, k), h), k);
        if (state) state->gru_h[static_cast<size_t>(l)] = h.detach();
      }

      auto mixed = mixer[static_cast<size_t>(l)].forward(y.with_shape({b * t, k, d}));
      x = mixed.with_shape({b, t, k, d});
    }
    return x;
  }
};

}  // namespace slotssm
