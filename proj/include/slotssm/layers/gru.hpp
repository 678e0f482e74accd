#pragma once

#include "slotssm/layers/nn.hpp"

namespace slotssm {

// GRU cell (update-gate-selects-candidate convention):
//   z = sigmoid(Wz x + Uz h + bz)
//   r = sigmoid(Wr x + Ur h + br)
//   n = tanh(Wn x + r (.) (Un h) + bn)
//   h' = (1 - z) (.) h + z (.) n
template <typename T>
struct GruCell {
  int64_t d_in = 0, d_h = 0;
  LinearParams<T> wx;  // D -> 3H, with bias (z | r | n)
  LinearParams<T> uh;  // H -> 3H, no bias

  GruCell() = default;
  GruCell(int64_t d, int64_t h, CounterRng& rng)
      : d_in(d), d_h(h), wx(d, 3 * h, rng, true, true), uh(h, 3 * h, rng, false, true) {}

  void reg(ParamRegistry<T>& r, const std::string& p) {
    wx.reg(r, p + ".wx");
    uh.reg(r, p + ".uh");
  }

  Tensor<T> zero_state(int64_t s) const { return Tensor<T>(Shape{s, d_h}); }

  // x: [S, D], h: [S, H] -> [S, H]
  Tensor<T> step(const Tensor<T>& x, const Tensor<T>& h) const {
    auto gx = wx.forward(x);
    auto gh = uh.forward(h);
    auto z = sigmoid(add(slice(gx, 1, 0, d_h), slice(gh, 1, 0, d_h)));
    auto r = sigmoid(add(slice(gx, 1, d_h, d_h), slice(gh, 1, d_h, d_h)));
    auto n = tanh(add(slice(gx, 1, 2 * d_h, d_h), mul(r, slice(gh, 1, 2 * d_h, d_h))));
    auto one_minus_z = add_scalar(neg(z), T(1));
    return add(mul(one_minus_z, h), mul(z, n));
  }

  // x: [S, T, D]; h carried in/out. Sequential over T by nature.
  Tensor<T> forward_seq(const Tensor<T>& x, Tensor<T>& h) const {
    int64_t t = x.dim(1);
    std::vector<Tensor<T>> outs;
    outs.reserve(static_cast<size_t>(t));
    for (int64_t ti = 0; ti < t; ++ti) {
      auto xt = slice(x, 1, ti, 1).with_shape({x.dim(0), d_in});
      h = step(xt, h);
      outs.push_back(h.with_shape({x.dim(0), 1, d_h}));
    }
    return concat(outs, 1);
  }
};

}  // namespace slotssm
