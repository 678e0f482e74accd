#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slotssm/core/gradcheck.hpp"
#include "slotssm/layers/stack.hpp"

using namespace slotssm;

namespace {

template <typename T>
std::vector<Tensor<T>> all_params(SlotStack<T>& stack) {
  ParamRegistry<T> reg;
  stack.reg(reg, "s");
  std::vector<Tensor<T>> v;
  for (auto& [name, p] : reg.items) v.push_back(*p);
  return v;
}

// Fresh modules have zero biases, which leaves layer-norm inputs nearly
// constant (variance ~ 0) where curvature is extreme and central differences
// at eps=1e-5 are meaningless. Gradcheck at generic parameter values instead.
template <typename T>
void jitter_params(std::vector<Tensor<T>>& params, uint64_t seed, T scale = T(0.2)) {
  CounterRng rng(seed, 999);
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v += static_cast<T>(rng.uniform(-scale, scale));
}

StackConfig tiny_cfg(Variant v, int64_t layers = 1, int64_t k = 2, int64_t d = 8) {
  StackConfig c;
  c.variant = v;
  c.layers = layers;
  c.slots = k;
  c.d_model = d;
  c.heads = 2;
  c.n_state = 4;
  c.enc_layers = 3;
  c.mlp_ratio = 2;
  c.t_max = 64;
  return c;
}

}  // namespace

TEST_CASE("mha: single token means every query gets that token's value path") {
  CounterRng rng(1, 0);
  Mha<float> attn(8, 2, rng);
  auto q = rand_uniform<float>({1, 3, 8}, rng, -1.0f, 1.0f);
  auto kv = rand_uniform<float>({1, 1, 8}, rng, -1.0f, 1.0f);
  auto out = attn.forward(q, kv);
  // attention over one key saturates at 1 for every query
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t d = 0; d < 8; ++d) CHECK(out.at({0, i, d}) == out.at({0, 0, d}));
  auto expected = attn.wo.forward(attn.wv.forward(kv));
  for (int64_t d = 0; d < 8; ++d)
    CHECK(out.at({0, 0, d}) == doctest::Approx(expected.at({0, 0, d})).epsilon(1e-5));
}

TEST_CASE("mha: identical tokens collapse the value regardless of attention") {
  CounterRng rng(2, 0);
  Mha<float> attn(8, 4, rng);
  auto q = rand_uniform<float>({1, 2, 8}, rng, -1.0f, 1.0f);
  auto tok = rand_uniform<float>({1, 1, 8}, rng, -1.0f, 1.0f);
  auto kv = broadcast_to(tok, {1, 5, 8});
  auto out5 = attn.forward(q, kv);
  auto out1 = attn.forward(q, tok);
  for (int64_t i = 0; i < out5.numel(); ++i)
    CHECK(out5.data()[i] == doctest::Approx(out1.data()[i]).epsilon(1e-5));
}

TEST_CASE("slot_encoder: identical tokens give slots equal to the M=1 case") {
  CounterRng rng(3, 0);
  SlotEncoder<float> enc(3, 8, 6, 2, 3, 16, rng);
  auto tok = rand_uniform<float>({2, 1, 8}, rng, -1.0f, 1.0f);
  auto many = broadcast_to(tok, {2, 7, 8});
  auto s1 = enc.forward(tok);
  auto s7 = enc.forward(many);
  for (int64_t i = 0; i < s1.numel(); ++i)
    CHECK(s7.data()[i] == doctest::Approx(s1.data()[i]).epsilon(1e-4));
}

TEST_CASE("slot_encoder: allows K > M; zero tokens are unrepresentable") {
  CounterRng rng(4, 0);
  SlotEncoder<float> enc(5, 8, 6, 2, 3, 16, rng);
  auto tok = rand_uniform<float>({1, 2, 8}, rng, -1.0f, 1.0f);  // K=5 > M=2
  auto s = enc.forward(tok);
  CHECK(s.shape() == Shape{1, 5, 6});
  // M = 0 cannot even be constructed
  CHECK_THROWS_AS(Tensor<float>(Shape{1, 0, 8}), Error);
}

TEST_CASE("slot_encoder: token permutation leaves slots unchanged") {
  CounterRng rng(5, 0);
  SlotEncoder<double> enc(3, 8, 6, 2, 3, 16, rng);
  auto tokens = rand_uniform<double>({1, 5, 8}, rng, -1.0, 1.0);
  auto s1 = enc.forward(tokens);
  // reverse the token order (embeddings ride along with their tokens)
  std::vector<Tensor<double>> rows;
  for (int64_t m = 4; m >= 0; --m) rows.push_back(slice(tokens, 1, m, 1));
  auto permuted = concat(rows, 1);
  auto s2 = enc.forward(permuted);
  for (int64_t i = 0; i < s1.numel(); ++i)
    CHECK(s2.data()[i] == doctest::Approx(s1.data()[i]).epsilon(1e-10));
}

TEST_CASE("inverted attention: K=1 gives uniform weights and the mean value") {
  CounterRng rng(6, 0);
  InvertedAttention<float> inv(8, 8, 8, 4, rng);
  auto q = rand_uniform<float>({1, 1, 8}, rng, -1.0f, 1.0f);
  auto kv = rand_uniform<float>({1, 6, 8}, rng, -1.0f, 1.0f);
  Tensor<float> attn;
  auto out = inv.forward(q, kv, &attn);
  for (int64_t m = 0; m < 6; ++m)
    CHECK(attn.at({0, 0, m}) == doctest::Approx(1.0f / 6.0f).epsilon(1e-5));
  auto v = inv.wv.forward(kv);
  for (int64_t d = 0; d < 8; ++d) {
    float mean_v = 0;
    for (int64_t m = 0; m < 6; ++m) mean_v += v.at({0, m, d});
    mean_v /= 6.0f;
    CHECK(out.at({0, 0, d}) == doctest::Approx(mean_v).epsilon(1e-4));
  }
}

TEST_CASE("inverted attention: pre-renormalization columns sum to 1") {
  CounterRng rng(7, 0);
  InvertedAttention<double> inv(8, 8, 8, 2, rng);
  auto q = rand_uniform<double>({1, 3, 8}, rng, -1.0, 1.0);
  auto kv = rand_uniform<double>({1, 5, 8}, rng, -1.0, 1.0);
  // recompute the scores with the module's own weights
  auto qh = detail::split_heads(inv.wq.forward(q), 2);
  auto kh = detail::split_heads(inv.wk.forward(kv), 2);
  auto scores = mul_scalar(matmul(qh, kh, false, true), 1.0 / std::sqrt(4.0));
  auto a = softmax(scores, 1);
  for (int64_t b = 0; b < a.dim(0); ++b)
    for (int64_t m = 0; m < 5; ++m) {
      double col = 0;
      for (int64_t k = 0; k < 3; ++k) col += a.at({b, k, m});
      CHECK(col == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("inverted attention: orthogonal queries claim disjoint token groups") {
  // 2 queries, 4 tokens; brute-force evaluation of the two softmaxes
  InvertedAttention<double> inv;
  inv.heads = 1;
  Tensor<double> eye({2, 2}, std::vector<double>{1, 0, 0, 1});
  inv.wq.w = eye;
  inv.wk.w = eye;
  inv.wv.w = eye;
  Tensor<double> q({1, 2, 2}, std::vector<double>{3, 0, 0, 3});
  Tensor<double> kv({1, 4, 2}, std::vector<double>{4, 0, 4, 0, 0, 4, 0, 4});
  Tensor<double> attn;
  auto out = inv.forward(q, kv, &attn);
  // oracle: scores s[k][m] = <q_k, t_m>/sqrt(2); softmax over k, renormalize rows
  double s[2][4], a[2][4];
  double qv[2][2] = {{3, 0}, {0, 3}}, tv[4][2] = {{4, 0}, {4, 0}, {0, 4}, {0, 4}};
  for (int k = 0; k < 2; ++k)
    for (int m = 0; m < 4; ++m)
      s[k][m] = (qv[k][0] * tv[m][0] + qv[k][1] * tv[m][1]) / std::sqrt(2.0);
  for (int m = 0; m < 4; ++m) {
    double z = std::exp(s[0][m]) + std::exp(s[1][m]);
    for (int k = 0; k < 2; ++k) a[k][m] = std::exp(s[k][m]) / z;
  }
  for (int k = 0; k < 2; ++k) {
    double rs = a[k][0] + a[k][1] + a[k][2] + a[k][3];
    for (int m = 0; m < 4; ++m) a[k][m] /= rs;
  }
  for (int k = 0; k < 2; ++k)
    for (int m = 0; m < 4; ++m)
      CHECK(attn.at({0, k, m}) == doctest::Approx(a[k][m]).epsilon(1e-6));
  // slot 0 concentrates on tokens {0,1}, slot 1 on {2,3}
  CHECK(attn.at({0, 0, 0}) + attn.at({0, 0, 1}) > 0.95);
  CHECK(attn.at({0, 1, 2}) + attn.at({0, 1, 3}) > 0.95);
  // output matches A.V
  for (int k = 0; k < 2; ++k)
    for (int d = 0; d < 2; ++d) {
      double expect = 0;
      for (int m = 0; m < 4; ++m) expect += a[k][m] * tv[m][d];
      CHECK(out.at({0, k, d}) == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("slot_ssm_forward: K=1 equals the raw block, bit-exact") {
  CounterRng rng(8, 0);
  MambaBlock<float> blk(8, 4, rng);
  auto slots = rand_uniform<float>({2, 5, 1, 8}, rng, -1.0f, 1.0f);
  auto y = slot_ssm_forward(blk, slots);
  auto direct = blk.forward(slots.with_shape({2, 5, 8}));
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == direct.data()[i]);
}

TEST_CASE("slot_ssm_forward: slot permutation permutes outputs bit-exactly") {
  CounterRng rng(9, 0);
  MambaBlock<float> blk(8, 4, rng);
  auto slots = rand_uniform<float>({1, 6, 3, 8}, rng, -1.0f, 1.0f);
  auto y = slot_ssm_forward(blk, slots);
  std::vector<int> perm = {2, 0, 1};
  std::vector<Tensor<float>> cols;
  for (int p : perm) cols.push_back(slice(slots, 2, p, 1));
  auto permuted = concat(cols, 2);
  auto yp = slot_ssm_forward(blk, permuted);
  for (int64_t t = 0; t < 6; ++t)
    for (int64_t k = 0; k < 3; ++k)
      for (int64_t d = 0; d < 8; ++d)
        CHECK(yp.at({0, t, k, d}) == y.at({0, t, perm[static_cast<size_t>(k)], d}));
}

TEST_CASE("slot_ssm_forward: no cross-slot leakage, bit-exact") {
  CounterRng rng(10, 0);
  MambaBlock<float> blk(8, 4, rng);
  auto slots = rand_uniform<float>({1, 6, 3, 8}, rng, -1.0f, 1.0f);
  auto y = slot_ssm_forward(blk, slots);
  for (int trial = 0; trial < 10; ++trial) {
    auto noisy = slots.detach();
    CounterRng nrng(200 + static_cast<uint64_t>(trial), 0);
    // replace slot 1's entire series with noise
    for (int64_t t = 0; t < 6; ++t)
      for (int64_t d = 0; d < 8; ++d)
        noisy.mutable_data()[(t * 3 + 1) * 8 + d] = static_cast<float>(nrng.uniform(-5, 5));
    auto y2 = slot_ssm_forward(blk, noisy);
    for (int64_t t = 0; t < 6; ++t)
      for (int64_t k = 0; k < 3; ++k) {
        if (k == 1) continue;
        for (int64_t d = 0; d < 8; ++d) CHECK(y2.at({0, t, k, d}) == y.at({0, t, k, d}));
      }
  }
}

TEST_CASE("slot_mixer: K=1 matches the closed-form hand computation") {
  CounterRng rng(11, 0);
  SlotMixer<double> mix(4, 2, 8, rng);
  auto y = rand_uniform<double>({1, 1, 4}, rng, -1.0, 1.0);
  auto out = mix.forward(y);
  // 1x1 attention has weight 1: out1 = y + Wo(Wv ln(y) + bv) + bo, then MLP
  auto ln1 = layer_norm(y, mix.ln_attn.g, mix.ln_attn.b);
  auto ctx = mix.attn.wo.forward(mix.attn.wv.forward(ln1));
  auto mid = add(y, ctx);
  auto expect = add(mid, mix.mlp.forward(layer_norm(mid, mix.ln_mlp.g, mix.ln_mlp.b)));
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(expect.data()[i]).epsilon(1e-12));
}

TEST_CASE("slot_mixer: permutation equivariance within 1e-6") {
  CounterRng rng(12, 0);
  SlotMixer<float> mix(8, 4, 16, rng);
  auto y = rand_uniform<float>({2, 4, 8}, rng, -1.0f, 1.0f);
  auto out = mix.forward(y);
  std::vector<int> perm = {3, 1, 0, 2};
  std::vector<Tensor<float>> cols;
  for (int p : perm) cols.push_back(slice(y, 1, p, 1));
  auto yp = mix.forward(concat(cols, 1));
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t k = 0; k < 4; ++k)
      for (int64_t d = 0; d < 8; ++d)
        CHECK(std::abs(yp.at({b, k, d}) - out.at({b, perm[static_cast<size_t>(k)], d})) < 1e-6f);
}

TEST_CASE("slot_mixer: zero value-out projection and zero MLP output is identity") {
  CounterRng rng(13, 0);
  SlotMixer<float> mix(8, 4, 16, rng);
  for (auto& v : mix.attn.wo.w.mutable_data()) v = 0.0f;
  for (auto& v : mix.attn.wo.b.mutable_data()) v = 0.0f;
  for (auto& v : mix.mlp.fc2.w.mutable_data()) v = 0.0f;
  for (auto& v : mix.mlp.fc2.b.mutable_data()) v = 0.0f;
  auto y = rand_uniform<float>({2, 3, 8}, rng, -1.0f, 1.0f);
  auto out = mix.forward(y);
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(out.data()[i] == y.data()[i]);
}

TEST_CASE("stack: L=1 equals manual encoder -> slot_ssm -> mixer composition") {
  CounterRng rng(14, 0);
  auto cfg = tiny_cfg(Variant::SlotSsm, 1, 2, 8);
  SlotStack<float> stack(cfg, 6, rng);
  CounterRng drng(15, 0);
  auto tokens = rand_uniform<float>({2, 3, 4, 6}, drng, -1.0f, 1.0f);
  auto out = stack.forward(tokens);
  auto slots = stack.encoder.forward(tokens.with_shape({6, 4, 6})).with_shape({2, 3, 2, 8});
  auto y = slot_ssm_forward(stack.ssm[0], slots);
  auto mixed = stack.mixer[0].forward(y.with_shape({6, 2, 8})).with_shape({2, 3, 2, 8});
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == mixed.data()[i]);
}

TEST_CASE("stack: temporal causality is bit-exact") {
  CounterRng rng(16, 0);
  auto cfg = tiny_cfg(Variant::SlotSsm, 2, 2, 8);
  SlotStack<float> stack(cfg, 6, rng);
  CounterRng drng(17, 0);
  auto tokens = rand_uniform<float>({1, 6, 3, 6}, drng, -1.0f, 1.0f);
  auto y1 = stack.forward(tokens);
  auto t2 = tokens.detach();
  const int64_t cut = 4;
  for (int64_t t = cut; t < 6; ++t)
    for (int64_t i = 0; i < 3 * 6; ++i) t2.mutable_data()[(t * 3 * 6) + i] = 2.5f;
  auto y2 = stack.forward(t2);
  for (int64_t t = 0; t < cut; ++t)
    for (int64_t k = 0; k < 2; ++k)
      for (int64_t d = 0; d < 8; ++d) CHECK(y1.at({0, t, k, d}) == y2.at({0, t, k, d}));
}

TEST_CASE("stack: recurrent chunking equals the full run at any split") {
  CounterRng rng(18, 0);
  for (auto variant : {Variant::SlotSsm, Variant::SingleState, Variant::SlotRnn,
                       Variant::OcSlotSsm}) {
    auto cfg = tiny_cfg(variant, 2, variant == Variant::SingleState ? 1 : 2, 8);
    int64_t dx = variant == Variant::OcSlotSsm ? 8 : 6;
    SlotStack<float> stack(cfg, dx, rng);
    CounterRng drng(19, 0);
    auto tokens = rand_uniform<float>({2, 8, 3, dx}, drng, -1.0f, 1.0f);
    auto yfull = stack.forward(tokens);
    for (int64_t cut : {1, 3, 7}) {
      auto st = stack.make_state(2);
      auto y1 = stack.forward(slice(tokens, 1, 0, cut), &st, 0);
      auto y2 = stack.forward(slice(tokens, 1, cut, 8 - cut), &st, cut);
      auto ycat = concat<float>({y1, y2}, 1);
      REQUIRE(ycat.numel() == yfull.numel());
      for (int64_t i = 0; i < yfull.numel(); ++i) {
        INFO("variant " << variant_to_string(variant) << " cut " << cut << " idx " << i);
        CHECK(std::abs(yfull.data()[i] - ycat.data()[i]) < 1e-5f);
      }
    }
  }
}

TEST_CASE("oc stack: inverted-attention keys/values are the layer-0 tokens at every layer") {
  CounterRng rng(20, 0);
  auto cfg = tiny_cfg(Variant::OcSlotSsm, 3, 2, 8);
  SlotStack<float> stack(cfg, 8, rng);
  CounterRng drng(21, 0);
  auto tokens = rand_uniform<float>({1, 2, 5, 8}, drng, -1.0f, 1.0f);
  stack.capture_inv_kv = true;
  stack.forward(tokens);
  REQUIRE(stack.debug_inv_kv.size() == 3);
  auto flat = tokens.with_shape({2, 5, 8});
  for (auto& kv : stack.debug_inv_kv) {
    REQUIRE(kv.numel() == flat.numel());
    for (int64_t i = 0; i < flat.numel(); ++i) CHECK(kv.data()[i] == flat.data()[i]);
  }
  stack.capture_inv_kv = false;
}

TEST_CASE("oc stack: L=1 equals manual inverted attention -> slot_ssm -> mixer") {
  CounterRng rng(22, 0);
  auto cfg = tiny_cfg(Variant::OcSlotSsm, 1, 2, 8);
  SlotStack<float> stack(cfg, 8, rng);
  CounterRng drng(23, 0);
  auto tokens = rand_uniform<float>({2, 3, 4, 8}, drng, -1.0f, 1.0f);
  auto out = stack.forward(tokens);
  auto q = broadcast_to(stack.oc_cls.with_shape({1, 2, 8}), {6, 2, 8});
  auto s = stack.inv_attn[0].forward(q, tokens.with_shape({6, 4, 8})).with_shape({2, 3, 2, 8});
  auto y = slot_ssm_forward(stack.ssm[0], s);
  auto mixed = stack.mixer[0].forward(y.with_shape({6, 2, 8})).with_shape({2, 3, 2, 8});
  for (int64_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == mixed.data()[i]);
}

TEST_CASE("slot_transformer: T=1 equals unmasked self-attention over slots") {
  CounterRng rng(24, 0);
  auto cfg = tiny_cfg(Variant::SlotTransformer, 1, 3, 8);
  SlotStack<float> stack(cfg, 6, rng);
  CounterRng drng(25, 0);
  auto tokens = rand_uniform<float>({2, 1, 4, 6}, drng, -1.0f, 1.0f);
  auto out = stack.forward(tokens);
  auto slots = stack.encoder.forward(tokens.with_shape({2, 4, 6}));
  auto temb = slice(stack.temporal_emb, 0, 0, 1);
  auto x = add(slots.with_shape({2, 1, 3, 8}), temb.with_shape({1, 1, 8}));
  auto ref = stack.tr_layers[0].forward(x.with_shape({2, 3, 8}), nullptr);
  for (int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-6));
}

TEST_CASE("slot_transformer: temporal causality is bit-exact") {
  CounterRng rng(26, 0);
  auto cfg = tiny_cfg(Variant::SlotTransformer, 2, 2, 8);
  SlotStack<float> stack(cfg, 6, rng);
  CounterRng drng(27, 0);
  auto tokens = rand_uniform<float>({1, 5, 3, 6}, drng, -1.0f, 1.0f);
  auto y1 = stack.forward(tokens);
  auto t2 = tokens.detach();
  for (int64_t i = 3 * 3 * 6; i < 5 * 3 * 6; ++i) t2.mutable_data()[i] = -4.0f;
  auto y2 = stack.forward(t2);
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t k = 0; k < 2; ++k)
      for (int64_t d = 0; d < 8; ++d) CHECK(y1.at({0, t, k, d}) == y2.at({0, t, k, d}));
}

TEST_CASE("slot_transformer: K=1 matches a hand-built causal transformer") {
  CounterRng rng(28, 0);
  auto cfg = tiny_cfg(Variant::SlotTransformer, 1, 1, 4);
  cfg.heads = 1;
  SlotStack<double> stack(cfg, 4, rng);
  CounterRng drng(29, 0);
  auto tokens = rand_uniform<double>({1, 4, 2, 4}, drng, -1.0, 1.0);
  auto out = stack.forward(tokens);

  // independent reference: slots via the encoder, then one pre-norm causal
  // attention + MLP layer evaluated with plain loops
  auto slots = stack.encoder.forward(tokens.with_shape({4, 2, 4}));  // [4,1,4]
  std::vector<double> x(16);
  for (int t = 0; t < 4; ++t)
    for (int d = 0; d < 4; ++d)
      x[static_cast<size_t>(t * 4 + d)] = slots.at({t, 0, d}) + stack.temporal_emb.at({t, d});
  auto& lay = stack.tr_layers[0];
  auto lin = [&](const Tensor<double>& w, const Tensor<double>& b, const std::vector<double>& in,
                 int64_t rows) {
    std::vector<double> o(static_cast<size_t>(rows * w.dim(1)), 0.0);
    for (int64_t r = 0; r < rows; ++r)
      for (int64_t j = 0; j < w.dim(1); ++j) {
        double acc = b.defined() ? b.at({j}) : 0.0;
        for (int64_t i = 0; i < w.dim(0); ++i) acc += in[static_cast<size_t>(r * w.dim(0) + i)] * w.at({i, j});
        o[static_cast<size_t>(r * w.dim(1) + j)] = acc;
      }
    return o;
  };
  auto ln_ref = [&](const Tensor<double>& g, const Tensor<double>& b, std::vector<double> in,
                    int64_t rows, int64_t d) {
    for (int64_t r = 0; r < rows; ++r) {
      double mu = 0, var = 0;
      for (int64_t i = 0; i < d; ++i) mu += in[static_cast<size_t>(r * d + i)];
      mu /= static_cast<double>(d);
      for (int64_t i = 0; i < d; ++i) {
        double v = in[static_cast<size_t>(r * d + i)] - mu;
        var += v * v;
      }
      var /= static_cast<double>(d);
      double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int64_t i = 0; i < d; ++i) {
        size_t ix = static_cast<size_t>(r * d + i);
        in[ix] = (in[ix] - mu) * inv * g.at({i}) + b.at({i});
      }
    }
    return in;
  };
  auto nx = ln_ref(lay.ln_attn.g, lay.ln_attn.b, x, 4, 4);
  auto qv = lin(lay.attn.wq.w, lay.attn.wq.b, nx, 4);
  auto kvv = lin(lay.attn.wk.w, lay.attn.wk.b, nx, 4);
  auto vv = lin(lay.attn.wv.w, lay.attn.wv.b, nx, 4);
  std::vector<double> ctx(16, 0.0);
  for (int t = 0; t < 4; ++t) {
    std::vector<double> sc(static_cast<size_t>(t) + 1);
    double mx = -1e300;
    for (int u = 0; u <= t; ++u) {
      double acc = 0;
      for (int d = 0; d < 4; ++d)
        acc += qv[static_cast<size_t>(t * 4 + d)] * kvv[static_cast<size_t>(u * 4 + d)];
      sc[static_cast<size_t>(u)] = acc / 2.0;  // sqrt(4)
      mx = std::max(mx, sc[static_cast<size_t>(u)]);
    }
    double z = 0;
    for (int u = 0; u <= t; ++u) z += std::exp(sc[static_cast<size_t>(u)] - mx);
    for (int u = 0; u <= t; ++u) {
      double w = std::exp(sc[static_cast<size_t>(u)] - mx) / z;
      for (int d = 0; d < 4; ++d) ctx[static_cast<size_t>(t * 4 + d)] += w * vv[static_cast<size_t>(u * 4 + d)];
    }
  }
  auto attno = lin(lay.attn.wo.w, lay.attn.wo.b, ctx, 4);
  for (int i = 0; i < 16; ++i) x[static_cast<size_t>(i)] += attno[static_cast<size_t>(i)];
  auto nx2 = ln_ref(lay.ln_mlp.g, lay.ln_mlp.b, x, 4, 4);
  auto h1 = lin(lay.mlp.fc1.w, lay.mlp.fc1.b, nx2, 4);
  for (auto& v : h1) v = v / (1.0 + std::exp(-v));
  auto h2 = lin(lay.mlp.fc2.w, lay.mlp.fc2.b, h1, 4);
  for (int i = 0; i < 16; ++i) x[static_cast<size_t>(i)] += h2[static_cast<size_t>(i)];

  for (int t = 0; t < 4; ++t)
    for (int d = 0; d < 4; ++d)
      CHECK(out.at({0, t, 0, d}) == doctest::Approx(x[static_cast<size_t>(t * 4 + d)]).epsilon(1e-8));
}

TEST_CASE("slot_transformer: refuses T*K beyond the configured cap") {
  CounterRng rng(30, 0);
  auto cfg = tiny_cfg(Variant::SlotTransformer, 1, 2, 8);
  cfg.tk_cap = 8;
  SlotStack<float> stack(cfg, 6, rng);
  auto tokens = Tensor<float>(Shape{1, 5, 2, 6});  // T*K = 10 > 8
  CHECK_THROWS_WITH_AS(stack.forward(tokens), doctest::Contains("cap"), Error);
}

TEST_CASE("gru: update gate forced to 1 makes the state the candidate") {
  CounterRng rng(31, 0);
  GruCell<float> cell(4, 4, rng);
  // push z-section bias strongly positive
  for (int64_t j = 0; j < 4; ++j) cell.wx.b.mutable_data()[j] = 50.0f;
  auto x = rand_uniform<float>({2, 4}, rng, -1.0f, 1.0f);
  auto h = rand_uniform<float>({2, 4}, rng, -1.0f, 1.0f);
  auto h2 = cell.step(x, h);
  // candidate with r from the actual gates
  auto gx = cell.wx.forward(x);
  auto gh = cell.uh.forward(h);
  auto r = sigmoid(add(slice(gx, 1, 4, 4), slice(gh, 1, 4, 4)));
  auto n = tanh(add(slice(gx, 1, 8, 4), mul(r, slice(gh, 1, 8, 4))));
  for (int64_t i = 0; i < h2.numel(); ++i)
    CHECK(h2.data()[i] == doctest::Approx(n.data()[i]).epsilon(1e-5));
}

TEST_CASE("gru: matches the textbook recurrence on random input") {
  CounterRng rng(32, 0);
  GruCell<double> cell(3, 3, rng);
  auto x = rand_uniform<double>({1, 6, 3}, rng, -1.0, 1.0);
  Tensor<double> h = cell.zero_state(1);
  auto yseq = cell.forward_seq(x, h);
  // independent loop evaluation
  std::vector<double> hv(3, 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int64_t t = 0; t < 6; ++t) {
    double z[3], r[3], n[3];
    for (int64_t j = 0; j < 3; ++j) {
      double az = cell.wx.b.at({j}), ar = cell.wx.b.at({3 + j}), an = cell.wx.b.at({6 + j});
      double hz = 0, hr = 0, hn = 0;
      for (int64_t i = 0; i < 3; ++i) {
        az += x.at({0, t, i}) * cell.wx.w.at({i, j});
        ar += x.at({0, t, i}) * cell.wx.w.at({i, 3 + j});
        an += x.at({0, t, i}) * cell.wx.w.at({i, 6 + j});
        hz += hv[static_cast<size_t>(i)] * cell.uh.w.at({i, j});
        hr += hv[static_cast<size_t>(i)] * cell.uh.w.at({i, 3 + j});
        hn += hv[static_cast<size_t>(i)] * cell.uh.w.at({i, 6 + j});
      }
      z[j] = sig(az + hz);
      r[j] = sig(ar + hr);
      n[j] = std::tanh(an + r[j] * hn);
    }
    for (int64_t j = 0; j < 3; ++j) hv[static_cast<size_t>(j)] = (1 - z[j]) * hv[static_cast<size_t>(j)] + z[j] * n[j];
    for (int64_t j = 0; j < 3; ++j)
      CHECK(yseq.at({0, t, j}) == doctest::Approx(hv[static_cast<size_t>(j)]).epsilon(1e-10));
  }
}

TEST_CASE("slot_rnn: no leakage before the mixer") {
  CounterRng rng(33, 0);
  GruCell<float> cell(8, 8, rng);
  CounterRng drng(34, 0);
  auto slots = rand_uniform<float>({1, 5, 3, 8}, drng, -1.0f, 1.0f);
  auto run = [&](const Tensor<float>& s) {
    auto folded = transpose(s, {0, 2, 1, 3}).with_shape({3, 5, 8});
    Tensor<float> h = cell.zero_state(3);
    return cell.forward_seq(folded, h);
  };
  auto y = run(slots);
  auto noisy = slots.detach();
  for (int64_t t = 0; t < 5; ++t)
    for (int64_t d = 0; d < 8; ++d) noisy.mutable_data()[(t * 3 + 2) * 8 + d] = 7.0f;
  auto y2 = run(noisy);
  for (int64_t k = 0; k < 2; ++k)  // slots 0 and 1 untouched
    for (int64_t i = 0; i < 5 * 8; ++i)
      CHECK(y.data()[k * 5 * 8 + i] == y2.data()[k * 5 * 8 + i]);
}

TEST_CASE("stack: K change across layers re-encodes from previous slots") {
  CounterRng rng(35, 0);
  auto cfg = tiny_cfg(Variant::SlotSsm, 2, 3, 8);
  cfg.slots_per_layer = {3, 2};
  SlotStack<float> stack(cfg, 6, rng);
  CounterRng drng(36, 0);
  auto tokens = rand_uniform<float>({1, 4, 3, 6}, drng, -1.0f, 1.0f);
  auto out = stack.forward(tokens);
  CHECK(out.shape() == Shape{1, 4, 2, 8});
}

TEST_CASE("stack config validation") {
  StackConfig c;
  c.variant = Variant::SingleState;
  c.slots = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = StackConfig{};
  c.d_model = 10;
  c.heads = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  c = StackConfig{};
  c.variant = Variant::OcSlotSsm;
  c.slots_per_layer = {3, 2};
  c.layers = 2;
  CHECK_THROWS_AS(c.validate(), Error);
}

TEST_CASE("gradcheck: every layer variant at toy shapes") {
  for (auto variant : {Variant::SlotSsm, Variant::OcSlotSsm, Variant::SingleState,
                       Variant::SlotTransformer, Variant::SlotRnn}) {
    CounterRng rng(40 + static_cast<uint64_t>(variant), 0);
    auto cfg = tiny_cfg(variant, variant == Variant::SlotSsm ? 2 : 1,
                        variant == Variant::SingleState ? 1 : 2, 4);
    cfg.heads = 2;
    cfg.n_state = 3;
    cfg.enc_layers = 1;
    cfg.mlp_ratio = 2;
    int64_t dx = variant == Variant::OcSlotSsm ? 4 : 4;
    SlotStack<double> stack(cfg, dx, rng);
    CounterRng drng(50, 0);
    auto tokens = rand_uniform<double>({1, 3, 2, dx}, drng, -1.0, 1.0);
    auto params = all_params(stack);
    jitter_params(params, 7 + static_cast<uint64_t>(variant));
    auto f = [&]() {
      auto y = stack.forward(tokens);
      return mean_all(mul(y, y));
    };
    double err = finite_diff_gradcheck(f, params);
    INFO("variant " << variant_to_string(variant));
    CHECK(err < 1e-4);
  }
}
