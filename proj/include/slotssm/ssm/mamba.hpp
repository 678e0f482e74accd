#pragma once

#include "slotssm/core/conv.hpp"
#include "slotssm/layers/nn.hpp"
#include "slotssm/ssm/scan.hpp"

namespace slotssm {

// Recurrent continuation state for one Mamba block: final hidden states plus
// the conv window tail (the last kw-1 pre-conv inputs).
template <typename T>
struct MambaState {
  Tensor<T> h;     // [S, Din, N]
  Tensor<T> tail;  // [S, kw-1, Din]
};

// Selective-SSM block: input norm, width expansion with a residual gate,
// depthwise causal conv + SiLU, input-dependent (B, C, delta), ZOH
// discretization of a fixed negative diagonal A, scan, gate, projection back.
template <typename T>
struct MambaBlock {
  int64_t d_model = 0, d_inner = 0, n_state = 0, conv_kw = 4;
  ScanMethod method = ScanMethod::Parallel;
  int64_t scan_chunk = 64;

  LayerNormParams<T> ln;
  LinearParams<T> w_in;    // D -> 2*Din (stream, gate)
  Tensor<T> conv_w, conv_b;
  LinearParams<T> w_b, w_c;  // Din -> N, no bias
  LinearParams<T> w_dt;      // Din -> 1, no bias; per-channel bias below
  Tensor<T> dt_bias;         // [Din]
  Tensor<T> a_log;           // [Din, N]; A = -exp(a_log)
  LinearParams<T> w_out;     // Din -> D

  MambaBlock() = default;

  MambaBlock(int64_t d, int64_t n, CounterRng& rng, double expand = 1.25, int64_t kw = 4)
      : d_model(d),
        d_inner(static_cast<int64_t>(std::llround(expand * static_cast<double>(d)))),
        n_state(n),
        conv_kw(kw),
        ln(d),
        w_in(d, 2 * static_cast<int64_t>(std::llround(expand * static_cast<double>(d))), rng, true,
             true),
        w_b(static_cast<int64_t>(std::llround(expand * static_cast<double>(d))), n, rng, false,
            true),
        w_c(static_cast<int64_t>(std::llround(expand * static_cast<double>(d))), n, rng, false,
            true),
        w_dt(static_cast<int64_t>(std::llround(expand * static_cast<double>(d))), 1, rng, false,
             true),
        w_out(static_cast<int64_t>(std::llround(expand * static_cast<double>(d))), d, rng, true,
              true) {
    T bound = T(1) / std::sqrt(static_cast<T>(conv_kw));
    conv_w = rand_uniform<T>({d_inner, conv_kw}, rng, -bound, bound);
    conv_b = Tensor<T>(Shape{d_inner}, T(0));
    // A[d,n] = -(n+1): S4D-real-style ramp, stored as log magnitude
    a_log = Tensor<T>(Shape{d_inner, n_state});
    for (int64_t di = 0; di < d_inner; ++di)
      for (int64_t ni = 0; ni < n_state; ++ni)
        a_log.mutable_data()[di * n_state + ni] = std::log(static_cast<T>(ni + 1));
    // delta bias so that softplus lands in [0.001, 0.1]
    dt_bias = Tensor<T>(Shape{d_inner});
    for (auto& v : dt_bias.mutable_data()) {
      double target = rng.uniform(0.001, 0.1);
      v = static_cast<T>(std::log(std::expm1(target)));  // softplus^-1
    }
  }

  void reg(ParamRegistry<T>& r, const std::string& p) {
    ln.reg(r, p + ".ln");
    w_in.reg(r, p + ".in");
    r.add(p + ".conv.w", conv_w);
    r.add(p + ".conv.b", conv_b);
    w_b.reg(r, p + ".sb");
    w_c.reg(r, p + ".sc");
    w_dt.reg(r, p + ".sdt");
    r.add(p + ".dt_bias", dt_bias);
    r.add(p + ".a_log", a_log);
    w_out.reg(r, p + ".out");
  }

  Tensor<T> zero_state_h(int64_t s) const { return Tensor<T>(Shape{s, d_inner, n_state}); }
  Tensor<T> zero_state_tail(int64_t s) const { return Tensor<T>(Shape{s, conv_kw - 1, d_inner}); }

  // s: [S, T, D]. When state is given, continues the recurrence from it and
  // advances it past the last step.
  Tensor<T> forward(const Tensor<T>& s, MambaState<T>* state = nullptr) const {
    if (s.rank() != 3 || s.dim(2) != d_model)
      fail("mamba: expected [S,T,", d_model, "], got ", shape_str(s.shape()));
    int64_t sb = s.dim(0), t = s.dim(1);

    auto u = ln.forward(s);
    auto xz = w_in.forward(u);                  // [S,T,2Din]
    auto x = slice(xz, 2, 0, d_inner);          // stream
    auto res = slice(xz, 2, d_inner, d_inner);  // gate

    Tensor<T> xcat = x;
    if (conv_kw > 1) {
      Tensor<T> prefix = (state && state->tail.defined())
                             ? state->tail
                             : Tensor<T>(Shape{sb, conv_kw - 1, d_inner});
      xcat = concat<T>({prefix, x}, 1);
    }
    auto xconv = slice(conv1d_causal(xcat, conv_w, conv_b), 1, xcat.dim(1) - t, t);
    auto xa = silu(xconv);  // [S,T,Din]

    auto bm = w_b.forward(xa);  // [S,T,N]
    auto cm = w_c.forward(xa);  // [S,T,N]
    auto delta = softplus(add(w_dt.forward(xa), dt_bias));  // [S,T,1]+[Din] -> [S,T,Din]

    auto a_mat = neg(exp(a_log));  // strictly negative diagonal
    auto [abar, bbar] = zoh_discretize(delta, a_mat, bm);

    Tensor<T> h0 = (state && state->h.defined()) ? state->h : zero_state_h(sb);
    auto [y_inner, hT] = selective_scan(abar, bbar, cm, xa, h0, method, scan_chunk);

    auto gated = mul(y_inner, silu(res));
    auto out = w_out.forward(gated);

    if (state) {
      state->h = hT.detach();
      // raw pre-conv stream tail: last kw-1 entries of [prefix; x]
      if (conv_kw > 1) state->tail = slice(xcat, 1, t, conv_kw - 1).detach();
    }
    return out;
  }
};

}  // namespace slotssm
