#pragma once

#include "slotssm/core/gradcheck.hpp"
#include "slotssm/decoders/spatial_broadcast.hpp"
#include "slotssm/decoders/transformer_decoder.hpp"
#include "slotssm/layers/stack.hpp"

namespace slotssm {

struct CheckResult {
  std::string name;
  double value = 0;  // max relative error / max abs difference
  bool pass = false;
};

namespace detail {

inline void jitter(std::vector<Tensor<double>>& params, uint64_t seed, double scale = 0.2) {
  CounterRng rng(seed, 999);
  for (auto& p : params)
    for (auto& v : p.mutable_data()) v += rng.uniform(-scale, scale);
}

}  // namespace detail

// Finite-difference verification (64-bit, central, eps 1e-5) of every
// operator, the Mamba block, every layer variant, and both decoders at toy
// shapes. Composite modules are checked at jittered parameters: fresh zero
// biases leave layer-norm inputs degenerate where finite differences are
// meaningless.
inline std::vector<CheckResult> gradient_suite(int64_t op_seeds = 20, double tol = 1e-4) {
  std::vector<CheckResult> results;
  auto push = [&](const std::string& name, double v) {
    results.push_back({name, v, v < tol});
  };

  // operators
  double worst_ops = 0;
  for (uint64_t seed = 0; seed < static_cast<uint64_t>(op_seeds); ++seed) {
    CounterRng rng(seed, 500);
    auto x = rand_uniform<double>({3, 4}, rng, -2.0, 2.0);
    auto w = rand_uniform<double>({3, 4}, rng, 0.5, 2.0);
    auto upd = [&](double e) { worst_ops = std::max(worst_ops, e); };
    upd(finite_diff_gradcheck([&]() { return sum_all(exp(x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(expm1(x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(sigmoid(x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(tanh(x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(silu(x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(softplus(x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(mul(relu(x), x)); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(mul(add(x, w), sub(x, w))); }, {x, w}));
    upd(finite_diff_gradcheck([&]() { return sum_all(div(x, w)); }, {x, w}));
    upd(finite_diff_gradcheck([&]() { return sum_all(mul(softmax(x, 1), x)); }, {x}));
    auto g = rand_uniform<double>({4}, rng, 0.5, 1.5);
    auto b = rand_uniform<double>({4}, rng, -0.5, 0.5);
    upd(finite_diff_gradcheck([&]() { return sum_all(mul(layer_norm(x, g, b), x)); }, {x, g, b}));
    auto a3 = rand_uniform<double>({2, 3, 4}, rng, -1.0, 1.0);
    auto b3 = rand_uniform<double>({2, 4, 2}, rng, -1.0, 1.0);
    upd(finite_diff_gradcheck([&]() { return sum_all(matmul(a3, b3)); }, {a3, b3}));
    auto lw = rand_uniform<double>({4, 3}, rng, -1.0, 1.0);
    auto lb = rand_uniform<double>({3}, rng, -0.5, 0.5);
    upd(finite_diff_gradcheck([&]() { return sum_all(tanh(linear(a3, lw, lb))); }, {a3, lw, lb}));
    auto x3 = rand_uniform<double>({2, 5, 3}, rng, -1.0, 1.0);
    auto cw = rand_uniform<double>({3, 4}, rng, -1.0, 1.0);
    auto cb = rand_uniform<double>({3}, rng, -0.5, 0.5);
    upd(finite_diff_gradcheck([&]() { return sum_all(tanh(conv1d_causal(x3, cw, cb))); },
                              {x3, cw, cb}));
    auto table = rand_uniform<double>({5, 3}, rng, -1.0, 1.0);
    IntArray idx({4}, {0, 3, 3, 1});
    upd(finite_diff_gradcheck(
        [&]() { return sum_all(mul(embedding(table, idx), embedding(table, idx))); }, {table}));
    auto tgt = rand_uniform<double>({3, 4}, rng, -1.0, 1.0).detach();
    upd(finite_diff_gradcheck([&]() { return mse_loss(x, tgt); }, {x}));
    auto zt = rand_uniform<double>({3, 4}, rng, 0.0, 1.0).detach();
    upd(finite_diff_gradcheck([&]() { return bce_with_logits(x, zt); }, {x}));
    IntArray cls({3}, {0, 1, 3});
    upd(finite_diff_gradcheck([&]() { return ce_with_logits(x, cls); }, {x}));
    upd(finite_diff_gradcheck([&]() { return sum_all(mul(transpose(x, {1, 0}), transpose(x, {1, 0}))); }, {x}));
    auto bb = rand_uniform<double>({4}, rng, -1.0, 1.0);
    upd(finite_diff_gradcheck([&]() { return sum_all(mul(broadcast_to(bb, {3, 4}), x)); }, {x, bb}));
    auto cx = rand_uniform<double>({1, 2, 3, 3}, rng, -1.0, 1.0);
    auto cw2 = rand_uniform<double>({2, 2, 5, 5}, rng, -0.4, 0.4);
    auto cb2 = rand_uniform<double>({2}, rng, -0.3, 0.3);
    upd(finite_diff_gradcheck([&]() { return sum_all(tanh(conv_transpose2d(cx, cw2, cb2, 2, 2, 1))); },
                              {cx, cw2, cb2}));
  }
  push("operators (" + std::to_string(op_seeds) + " seeds)", worst_ops);

  // mamba block, [T=6, D=8]
  {
    CounterRng rng(44, 0);
    MambaBlock<double> blk(8, 4, rng);
    auto s = rand_uniform<double>({1, 6, 8}, rng, -1.0, 1.0);
    ParamRegistry<double> reg;
    blk.reg(reg, "m");
    std::vector<Tensor<double>> params;
    for (auto& [n, p] : reg.items) params.push_back(*p);
    params.push_back(s);
    push("mamba_block [T=6,D=8]", finite_diff_gradcheck([&]() {
           auto y = blk.forward(s);
           return sum_all(mul(y, y));
         }, params));
  }

  // every layer variant
  for (auto variant : {Variant::SlotSsm, Variant::OcSlotSsm, Variant::SingleState,
                       Variant::SlotTransformer, Variant::SlotRnn}) {
    StackConfig c;
    c.variant = variant;
    c.layers = variant == Variant::SlotSsm ? 2 : 1;
    c.slots = variant == Variant::SingleState ? 1 : 2;
    c.d_model = 4;
    c.heads = 2;
    c.n_state = 3;
    c.enc_layers = 1;
    c.mlp_ratio = 2;
    c.t_max = 64;
    CounterRng rng(60 + static_cast<uint64_t>(variant), 0);
    SlotStack<double> stack(c, 4, rng);
    CounterRng drng(61, 0);
    auto tokens = rand_uniform<double>({1, 3, 2, 4}, drng, -1.0, 1.0);
    ParamRegistry<double> reg;
    stack.reg(reg, "s");
    std::vector<Tensor<double>> params;
    for (auto& [n, p] : reg.items) params.push_back(*p);
    detail::jitter(params, 70 + static_cast<uint64_t>(variant));
    push("stack variant " + variant_to_string(variant), finite_diff_gradcheck([&]() {
           auto y = stack.forward(tokens);
           return mean_all(mul(y, y));
         }, params));
  }

  // both decoders
  {
    CounterRng rng(80, 0);
    TransformerDecoder<double> dec(2, 2, 2, 4, 2, 2, 8, rng);
    auto slots = rand_uniform<double>({1, 2, 4}, rng, -1.0, 1.0);
    ParamRegistry<double> reg;
    dec.reg(reg, "d");
    std::vector<Tensor<double>> params;
    for (auto& [n, p] : reg.items) params.push_back(*p);
    params.push_back(slots);
    detail::jitter(params, 81);
    push("transformer decoder", finite_diff_gradcheck([&]() {
           auto y = dec.forward(slots);
           return mean_all(mul(y, y));
         }, params));
  }
  {
    CounterRng rng(90, 0);
    SpatialBroadcastDecoder<double> dec(4, 16, rng, 8, 6);
    auto slots = rand_uniform<double>({1, 2, 4}, rng, -1.0, 1.0);
    ParamRegistry<double> reg;
    dec.reg(reg, "sbd");
    std::vector<Tensor<double>> params;
    for (auto& [n, p] : reg.items) params.push_back(*p);
    params.push_back(slots);
    detail::jitter(params, 91, 0.1);
    push("spatial broadcast decoder", finite_diff_gradcheck([&]() {
           auto out = dec.forward(slots);
           return add(mean_all(mul(out.composite, out.composite)), mean_all(out.weights));
         }, params));
  }
  return results;
}

// Parallel vs sequential scan agreement over random instances.
template <typename T>
double scan_equivalence(int64_t instances, const std::vector<int64_t>& lengths, uint64_t seed0) {
  double worst = 0;
  int64_t idx = 0;
  for (int64_t i = 0; i < instances; ++i) {
    int64_t t = lengths[static_cast<size_t>(i) % lengths.size()];
    CounterRng rng(seed0 + static_cast<uint64_t>(idx++), 300);
    int64_t s = 1 + static_cast<int64_t>(rng.uniform_int(2)), d = 2, n = 4;
    auto abar = rand_uniform<T>({s, t, d, n}, rng, T(0.05), T(0.999));
    auto bbar = rand_uniform<T>({s, t, d, n}, rng, T(-1), T(1));
    auto c = rand_uniform<T>({s, t, n}, rng, T(-1), T(1));
    auto u = rand_uniform<T>({s, t, d}, rng, T(-1), T(1));
    auto h0 = rand_uniform<T>({s, d, n}, rng, T(-1), T(1));
    auto [ys, hs] = selective_scan(abar, bbar, c, u, h0, ScanMethod::Sequential);
    auto [yp, hp] = selective_scan(abar, bbar, c, u, h0, ScanMethod::Parallel);
    for (int64_t j = 0; j < ys.numel(); ++j)
      worst = std::max(worst, static_cast<double>(std::abs(ys.data()[j] - yp.data()[j])));
    for (int64_t j = 0; j < hs.numel(); ++j)
      worst = std::max(worst, static_cast<double>(std::abs(hs.data()[j] - hp.data()[j])));
  }
  return worst;
}

}  // namespace slotssm
