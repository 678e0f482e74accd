#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "slotssm/core/gradcheck.hpp"
#include "slotssm/decoders/spatial_broadcast.hpp"
#include "slotssm/decoders/transformer_decoder.hpp"

using namespace slotssm;

TEST_CASE("transformer decoder: K=1 cross-attention weights are all 1") {
  CounterRng rng(1, 0);
  TransformerDecoder<float> dec(4, 2, 1, 8, 2, 3, 16, rng);
  auto slots = rand_uniform<float>({2, 1, 8}, rng, -1.0f, 1.0f);
  Tensor<float> attn;
  auto logits = dec.forward(slots, &attn);
  CHECK(logits.shape() == Shape{2, 16, 4});
  CHECK(attn.shape() == Shape{2, 16, 1});
  for (float v : attn.data()) CHECK(v == doctest::Approx(1.0f));
}

TEST_CASE("transformer decoder: attention rows are stochastic and argmax maps to slots") {
  CounterRng rng(2, 0);
  TransformerDecoder<float> dec(4, 2, 1, 8, 4, 3, 16, rng);
  auto slots = rand_uniform<float>({1, 5, 8}, rng, -1.0f, 1.0f);
  Tensor<float> attn;
  dec.forward(slots, &attn);
  for (int64_t p = 0; p < 16; ++p) {
    float total = 0;
    for (int64_t k = 0; k < 5; ++k) total += attn.at({0, p, k});
    CHECK(total == doctest::Approx(1.0f).epsilon(1e-5));
  }
  auto assign = attention_argmax(attn);
  CHECK(assign.shape == Shape{1, 16});
  for (int64_t p = 0; p < 16; ++p) {
    int32_t best = 0;
    for (int64_t k = 1; k < 5; ++k)
      if (attn.at({0, p, k}) > attn.at({0, p, best})) best = static_cast<int32_t>(k);
    CHECK(assign.data[static_cast<size_t>(p)] == best);
  }
}

TEST_CASE("transformer decoder: zeroed head gives uniform class logits") {
  CounterRng rng(3, 0);
  TransformerDecoder<float> dec(4, 2, 7, 8, 2, 3, 16, rng);
  for (auto& v : dec.head.w.mutable_data()) v = 0.0f;
  for (auto& v : dec.head.b.mutable_data()) v = 0.0f;
  auto slots = rand_uniform<float>({1, 3, 8}, rng, -1.0f, 1.0f);
  auto logits = dec.forward(slots);
  for (float v : logits.data()) CHECK(v == 0.0f);
}

TEST_CASE("transformer decoder: gradcheck end to end") {
  CounterRng rng(4, 0);
  TransformerDecoder<double> dec(2, 2, 2, 4, 2, 2, 8, rng);
  auto slots = rand_uniform<double>({1, 2, 4}, rng, -1.0, 1.0);
  ParamRegistry<double> reg;
  dec.reg(reg, "d");
  std::vector<Tensor<double>> params;
  for (auto& [n, p] : reg.items) params.push_back(*p);
  params.push_back(slots);
  CounterRng jit(5, 999);
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v += jit.uniform(-0.2, 0.2);
  auto f = [&]() {
    auto y = dec.forward(slots);
    return mean_all(mul(y, y));
  };
  CHECK(finite_diff_gradcheck(f, params) < 1e-4);
}

TEST_CASE("sbd: K=1 composite equals the single slot image exactly") {
  CounterRng rng(5, 0);
  SpatialBroadcastDecoder<float> dec(8, 16, rng, 8, 8);
  auto slots = rand_uniform<float>({2, 1, 8}, rng, -1.0f, 1.0f);
  auto out = dec.forward(slots);
  CHECK(out.rgb.shape() == Shape{2, 1, 16, 16, 3});
  for (float v : out.weights.data()) CHECK(v == 1.0f);  // softmax over one slot
  for (int64_t i = 0; i < out.composite.numel(); ++i)
    CHECK(out.composite.data()[i] == out.rgb.data()[i]);
}

TEST_CASE("sbd: identical slots split alpha uniformly") {
  CounterRng rng(6, 0);
  SpatialBroadcastDecoder<float> dec(8, 16, rng, 8, 8);
  auto one = rand_uniform<float>({1, 1, 8}, rng, -1.0f, 1.0f);
  auto slots = broadcast_to(one, {1, 4, 8});
  auto out = dec.forward(slots);
  for (float v : out.weights.data()) CHECK(v == doctest::Approx(0.25f));
  // composite equals any single slot's rgb
  for (int64_t i = 0; i < 16 * 16 * 3; ++i)
    CHECK(out.composite.data()[i] == doctest::Approx(out.rgb.data()[i]).epsilon(1e-5));
}

TEST_CASE("sbd: composite equals an externally recomputed weighted sum") {
  CounterRng rng(7, 0);
  SpatialBroadcastDecoder<double> dec(6, 16, rng, 8, 8);
  auto slots = rand_uniform<double>({1, 3, 6}, rng, -1.0, 1.0);
  auto out = dec.forward(slots);
  // alpha weights per pixel sum to 1
  for (int64_t i = 0; i < 16 * 16; ++i) {
    double s = 0;
    for (int64_t k = 0; k < 3; ++k) s += out.weights.at({0, k, i / 16, i % 16});
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  // recompute softmax(alpha) and the weighted sum from the exported pieces
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x) {
      double mx = -1e300;
      for (int64_t k = 0; k < 3; ++k) mx = std::max(mx, out.alpha.at({0, k, y, x}));
      double z = 0;
      for (int64_t k = 0; k < 3; ++k) z += std::exp(out.alpha.at({0, k, y, x}) - mx);
      for (int64_t c = 0; c < 3; ++c) {
        double acc = 0;
        for (int64_t k = 0; k < 3; ++k)
          acc += std::exp(out.alpha.at({0, k, y, x}) - mx) / z * out.rgb.at({0, k, y, x, c});
        CHECK(out.composite.at({0, y, x, c}) == doctest::Approx(acc).epsilon(1e-9));
      }
    }
  // composite lies in the convex hull of the per-slot values
  for (int64_t y = 0; y < 16; ++y)
    for (int64_t x = 0; x < 16; ++x)
      for (int64_t c = 0; c < 3; ++c) {
        double lo = 1e300, hi = -1e300;
        for (int64_t k = 0; k < 3; ++k) {
          lo = std::min(lo, out.rgb.at({0, k, y, x, c}));
          hi = std::max(hi, out.rgb.at({0, k, y, x, c}));
        }
        CHECK(out.composite.at({0, y, x, c}) >= lo - 1e-9);
        CHECK(out.composite.at({0, y, x, c}) <= hi + 1e-9);
      }
}

TEST_CASE("sbd: alpha argmax matches an external recomputation") {
  CounterRng rng(8, 0);
  SpatialBroadcastDecoder<float> dec(6, 16, rng, 8, 8);
  auto slots = rand_uniform<float>({2, 4, 6}, rng, -1.0f, 1.0f);
  auto out = dec.forward(slots);
  auto assign = alpha_argmax(out.alpha);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t y = 0; y < 16; ++y)
      for (int64_t x = 0; x < 16; ++x) {
        int32_t best = 0;
        for (int64_t k = 1; k < 4; ++k)
          if (out.alpha.at({b, k, y, x}) > out.alpha.at({b, best, y, x}))
            best = static_cast<int32_t>(k);
        CHECK(assign.data[static_cast<size_t>((b * 16 + y) * 16 + x)] == best);
      }
}

TEST_CASE("sbd: unreachable resolution is a build-time config error") {
  CounterRng rng(9, 0);
  CHECK_THROWS_WITH_AS(SpatialBroadcastDecoder<float>(8, 24, rng, 8, 8),
                       doctest::Contains("not reachable"), Error);
  CHECK_THROWS_AS(SpatialBroadcastDecoder<float>(8, 8, rng, 8, 8), Error);  // no stages
}

TEST_CASE("sbd: gradcheck end to end at a narrow configuration") {
  CounterRng rng(10, 0);
  SpatialBroadcastDecoder<double> dec(4, 16, rng, 8, 6);
  auto slots = rand_uniform<double>({1, 2, 4}, rng, -1.0, 1.0);
  ParamRegistry<double> reg;
  dec.reg(reg, "sbd");
  std::vector<Tensor<double>> params;
  for (auto& [n, p] : reg.items) params.push_back(*p);
  params.push_back(slots);
  CounterRng jit(11, 999);
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v += jit.uniform(-0.1, 0.1);
  auto f = [&]() {
    auto out = dec.forward(slots);
    return add(mean_all(mul(out.composite, out.composite)), mean_all(out.weights));
  };
  CHECK(finite_diff_gradcheck(f, params) < 1e-4);
}

TEST_CASE("losses: documented trivial values") {
  // uniform logits over 7 classes -> CE = ln 7 per pixel
  Tensor<double> logits({4, 7}, std::vector<double>(28, 0.0));
  IntArray cls({4}, {0, 3, 6, 2});
  CHECK(ce_with_logits(logits, cls).item() == doctest::Approx(std::log(7.0)).epsilon(1e-12));
  // BCE at logit 0 vs target 1 -> ln 2 per pixel
  Tensor<double> z({5}, std::vector<double>(5, 0.0));
  Tensor<double> ones({5}, std::vector<double>(5, 1.0));
  CHECK(bce_with_logits(z, ones).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  // MSE at the target -> exactly 0
  CounterRng rng(12, 0);
  auto p = rand_uniform<double>({3, 3}, rng, -1.0, 1.0);
  CHECK(mse_loss(p, p.detach()).item() == 0.0);
  // class out of range
  IntArray bad({4}, {0, 3, 7, 2});
  CHECK_THROWS_AS(ce_with_logits(logits, bad), Error);
}
