#pragma once

#include "slotssm/core/matmul.hpp"

namespace slotssm {

enum class ScanMethod { Sequential, Parallel };

inline ScanMethod scan_method_from_string(const std::string& s) {
  if (s == "sequential") return ScanMethod::Sequential;
  if (s == "parallel") return ScanMethod::Parallel;
  fail("unknown scan method '", s, "' (expected sequential|parallel)");
}

// Zero-order-hold discretization of a diagonal continuous-time system:
//   abar = exp(delta * A)
//   bbar = ((abar - 1) / A) * B     (evaluated via expm1 for small delta*A)
// delta: [S,T,D] (> 0), A: [D,N] (strictly negative), B: [S,T,N].
// Returns (abar, bbar), both [S,T,D,N]. Differentiable composite.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> zoh_discretize(const Tensor<T>& delta, const Tensor<T>& A,
                                               const Tensor<T>& B) {
  if (delta.rank() != 3 || A.rank() != 2 || B.rank() != 3)
    fail("zoh_discretize: expected delta [S,T,D], A [D,N], B [S,T,N], got ",
         shape_str(delta.shape()), ", ", shape_str(A.shape()), ", ", shape_str(B.shape()));
  int64_t s = delta.dim(0), t = delta.dim(1), d = delta.dim(2), n = A.dim(1);
  if (A.dim(0) != d) fail("zoh_discretize: A rows ", A.dim(0), " vs channels ", d);
  if (B.dim(0) != s || B.dim(1) != t || B.dim(2) != n)
    fail("zoh_discretize: B shape ", shape_str(B.shape()), " inconsistent with delta/A");
  for (T v : delta.data())
    if (!(v > T(0))) fail("zoh_discretize: delta must be strictly positive");
  for (T v : A.data()) {
    if (v == T(0)) fail("zoh_discretize: zero entry in A");
    if (v > T(0)) fail("zoh_discretize: A must be negative for stability");
  }
  auto da = mul(delta.with_shape({s, t, d, 1}), A);     // [S,T,D,N]
  auto abar = exp(da);
  auto bbar = mul(div(expm1(da), A), B.with_shape({s, t, 1, n}));
  return {abar, bbar};
}

namespace detail {

// Blelloch-style inclusive scan of the pair recurrence h_t = a_t*h_{t-1} + b_t
// over one chunk of length `len` (padded to pow2) for a row of dn lanes.
// a/b hold the chunk elements and are overwritten with scratch; h_in enters,
// out[t] receives the inclusive states, h_in leaves as the carry.
template <typename T>
void blelloch_chunk(T* aw, T* bw, const T* a_orig, const T* b_orig, T* h, T* out, int64_t len,
                    int64_t p2, int64_t dn) {
  // pad with identity (1, 0)
  for (int64_t i = len; i < p2; ++i)
    for (int64_t j = 0; j < dn; ++j) {
      aw[i * dn + j] = T(1);
      bw[i * dn + j] = T(0);
    }
  // up-sweep
  for (int64_t step = 1; step < p2; step <<= 1)
    for (int64_t i = 2 * step - 1; i < p2; i += 2 * step) {
      T* ar = aw + i * dn;
      T* br = bw + i * dn;
      const T* al = aw + (i - step) * dn;
      const T* bl = bw + (i - step) * dn;
      for (int64_t j = 0; j < dn; ++j) {
        br[j] = ar[j] * bl[j] + br[j];
        ar[j] = ar[j] * al[j];
      }
    }
  // down-sweep -> exclusive prefixes
  for (int64_t j = 0; j < dn; ++j) {
    aw[(p2 - 1) * dn + j] = T(1);
    bw[(p2 - 1) * dn + j] = T(0);
  }
  for (int64_t step = p2 >> 1; step >= 1; step >>= 1)
    for (int64_t i = 2 * step - 1; i < p2; i += 2 * step) {
      T* ar = aw + i * dn;
      T* br = bw + i * dn;
      T* al = aw + (i - step) * dn;
      T* bl = bw + (i - step) * dn;
      for (int64_t j = 0; j < dn; ++j) {
        T ta = al[j], tb = bl[j];
        al[j] = ar[j];
        bl[j] = br[j];
        // right child's exclusive prefix = parent prefix, then left subtree
        br[j] = ta * br[j] + tb;
        ar[j] = ta * ar[j];
      }
    }
  // inclusive state: h_t = a_t * (a_excl*h_in + b_excl) + b_t
  for (int64_t i = 0; i < len; ++i) {
    const T* ae = aw + i * dn;
    const T* be = bw + i * dn;
    const T* ao = a_orig + i * dn;
    const T* bo = b_orig + i * dn;
    T* o = out + i * dn;
    for (int64_t j = 0; j < dn; ++j) o[j] = ao[j] * (ae[j] * h[j] + be[j]) + bo[j];
  }
  for (int64_t j = 0; j < dn; ++j) h[j] = out[(len - 1) * dn + j];
}

}  // namespace detail

// Core linear recurrence with readout:
//   h_t = abar_t (.) h_{t-1} + bu_t,   y[t,d] = sum_n C[t,n] * h[t,d,n]
// abar, bu: [S,T,D,N]; C: [S,T,N]; h0: [S,D,N]. Returns y [S,T,D], hT [S,D,N].
// The parallel method combines pairs (a,b) over a fixed binary tree per chunk,
// so results are deterministic for a given (T, chunk) regardless of threads.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> scan_linear(const Tensor<T>& abar, const Tensor<T>& bu,
                                            const Tensor<T>& C, const Tensor<T>& h0,
                                            ScanMethod method, int64_t chunk = 64) {
  if (abar.rank() != 4 || bu.shape() != abar.shape())
    fail("scan: abar/bu must both be [S,T,D,N], got ", shape_str(abar.shape()), " and ",
         shape_str(bu.shape()));
  int64_t s = abar.dim(0), t = abar.dim(1), d = abar.dim(2), n = abar.dim(3);
  if (C.shape() != Shape{s, t, n})
    fail("scan: C must be [S,T,N]=", shape_str({s, t, n}), ", got ", shape_str(C.shape()));
  if (h0.shape() != Shape{s, d, n})
    fail("scan: h0 must be [S,D,N]=", shape_str({s, d, n}), ", got ", shape_str(h0.shape()));
  if (chunk < 1) fail("scan: chunk must be >= 1");

  Tensor<T> y(Shape{s, t, d});
  Tensor<T> hT(Shape{s, d, n});
  // all intermediate states, saved for backward
  auto h_all = std::make_shared<std::vector<T>>(static_cast<size_t>(s * t * d * n));

  const T* pa = abar.ptr();
  const T* pb = bu.ptr();
  const T* pc = C.ptr();
  const T* ph0 = h0.ptr();
  T* py = y.ptr();
  T* phT = hT.ptr();
  T* ph = h_all->data();
  int64_t dn = d * n;

  if (method == ScanMethod::Sequential) {
#pragma omp parallel for schedule(static)
    for (int64_t si = 0; si < s; ++si) {
      std::vector<T> h(ph0 + si * dn, ph0 + (si + 1) * dn);
      for (int64_t ti = 0; ti < t; ++ti) {
        const T* a = pa + (si * t + ti) * dn;
        const T* b = pb + (si * t + ti) * dn;
        T* hs = ph + (si * t + ti) * dn;
        for (int64_t j = 0; j < dn; ++j) {
          h[static_cast<size_t>(j)] = a[j] * h[static_cast<size_t>(j)] + b[j];
          hs[j] = h[static_cast<size_t>(j)];
        }
      }
      std::copy(h.begin(), h.end(), phT + si * dn);
    }
  } else {
    int64_t p2 = 1;
    int64_t clen = std::min(chunk, t);
    while (p2 < clen) p2 <<= 1;
#pragma omp parallel for schedule(static)
    for (int64_t si = 0; si < s; ++si) {
      std::vector<T> aw(static_cast<size_t>(p2 * dn)), bw(static_cast<size_t>(p2 * dn));
      std::vector<T> h(ph0 + si * dn, ph0 + (si + 1) * dn);
      for (int64_t t0 = 0; t0 < t; t0 += clen) {
        int64_t len = std::min(clen, t - t0);
        const T* ao = pa + (si * t + t0) * dn;
        const T* bo = pb + (si * t + t0) * dn;
        std::copy(ao, ao + len * dn, aw.data());
        std::copy(bo, bo + len * dn, bw.data());
        detail::blelloch_chunk(aw.data(), bw.data(), ao, bo, h.data(),
                               ph + (si * t + t0) * dn, len, p2, dn);
      }
      std::copy(h.begin(), h.end(), phT + si * dn);
    }
  }

  // readout
#pragma omp parallel for schedule(static)
  for (int64_t si = 0; si < s; ++si)
    for (int64_t ti = 0; ti < t; ++ti) {
      const T* hs = ph + (si * t + ti) * dn;
      const T* cs = pc + (si * t + ti) * n;
      T* ys = py + (si * t + ti) * d;
      for (int64_t di = 0; di < d; ++di) {
        T acc = T(0);
        for (int64_t ni = 0; ni < n; ++ni) acc += cs[ni] * hs[di * n + ni];
        ys[di] = acc;
      }
    }
  check_finite("scan", y);
  check_finite("scan", hT);

  if (tracing<T>({&abar, &bu, &C, &h0})) {
    y.set_requires_grad(true);
    hT.set_requires_grad(true);
    Tensor<T> ac = abar, bc = bu, cc = C, h0c = h0, yc = y, hTc = hT;
    Tape<T>::current()->record([ac, bc, cc, h0c, yc, hTc, h_all, s, t, d, n, dn]() mutable {
      if (!yc.has_grad() && !hTc.has_grad()) return;
      std::vector<T> zero_y, zero_h;
      const T* gy;
      if (yc.has_grad()) gy = yc.grad().data();
      else { zero_y.assign(static_cast<size_t>(s * t * d), T(0)); gy = zero_y.data(); }
      const T* ghT;
      if (hTc.has_grad()) ghT = hTc.grad().data();
      else { zero_h.assign(static_cast<size_t>(s * dn), T(0)); ghT = zero_h.data(); }
      const T* pa = ac.ptr();
      const T* pc = cc.ptr();
      const T* ph = h_all->data();
      const T* ph0 = h0c.ptr();

      std::vector<T> da(static_cast<size_t>(s * t * dn), T(0));
      std::vector<T> dbu(static_cast<size_t>(s * t * dn), T(0));
      std::vector<T> dC(static_cast<size_t>(s * t * n), T(0));
      std::vector<T> dh0(static_cast<size_t>(s * dn), T(0));

#pragma omp parallel for schedule(static)
      for (int64_t si = 0; si < s; ++si) {
        std::vector<T> gh(ghT + si * dn, ghT + (si + 1) * dn);
        for (int64_t ti = t - 1; ti >= 0; --ti) {
          int64_t base = (si * t + ti) * dn;
          const T* cs = pc + (si * t + ti) * n;
          const T* gys = gy + (si * t + ti) * d;
          const T* hs = ph + base;
          // dL/dh_t from the readout
          for (int64_t di = 0; di < d; ++di) {
            T g = gys[di];
            if (g != T(0))
              for (int64_t ni = 0; ni < n; ++ni) gh[static_cast<size_t>(di * n + ni)] += g * cs[ni];
          }
          // dC[t,n] = sum_d gy[t,d] * h[t,d,n]
          T* dcs = dC.data() + (si * t + ti) * n;
          for (int64_t di = 0; di < d; ++di) {
            T g = gys[di];
            if (g != T(0))
              for (int64_t ni = 0; ni < n; ++ni) dcs[ni] += g * hs[di * n + ni];
          }
          const T* hprev = (ti == 0) ? ph0 + si * dn : ph + (si * t + ti - 1) * dn;
          const T* as = pa + base;
          for (int64_t j = 0; j < dn; ++j) {
            da[static_cast<size_t>(base + j)] = gh[static_cast<size_t>(j)] * hprev[j];
            dbu[static_cast<size_t>(base + j)] = gh[static_cast<size_t>(j)];
            gh[static_cast<size_t>(j)] *= as[j];  // propagate to h_{t-1}
          }
        }
        std::copy(gh.begin(), gh.end(), dh0.data() + si * dn);
      }
      if (ac.requires_grad()) ac.accumulate_grad("scan", da.data(), ac.numel());
      if (bc.requires_grad()) bc.accumulate_grad("scan", dbu.data(), bc.numel());
      if (cc.requires_grad()) cc.accumulate_grad("scan", dC.data(), cc.numel());
      if (h0c.requires_grad()) h0c.accumulate_grad("scan", dh0.data(), h0c.numel());
    });
  }
  return {y, hT};
}

// Selective scan per the discrete system contract:
//   h_t = abar_t (.) h_{t-1} + bbar_t * u_t,   y_t[d] = sum_n C[t,n] h_t[d,n]
// abar/bbar: [S,T,D,N], C: [S,T,N], u: [S,T,D], h0: [S,D,N] (zeros by default).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> selective_scan(const Tensor<T>& abar, const Tensor<T>& bbar,
                                               const Tensor<T>& C, const Tensor<T>& u,
                                               Tensor<T> h0, ScanMethod method,
                                               int64_t chunk = 64) {
  if (u.rank() != 3)
    fail("selective_scan: u must be [S,T,D], got ", shape_str(u.shape()));
  int64_t s = u.dim(0), t = u.dim(1), d = u.dim(2);
  if (!h0.defined()) h0 = Tensor<T>(Shape{s, d, abar.dim(3)});
  auto bu = mul(bbar, u.with_shape({s, t, d, 1}));
  return scan_linear(abar, bu, C, h0, method, chunk);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> selective_scan_sequential(const Tensor<T>& abar,
                                                          const Tensor<T>& bbar,
                                                          const Tensor<T>& C, const Tensor<T>& u,
                                                          Tensor<T> h0 = {}) {
  return selective_scan(abar, bbar, C, u, std::move(h0), ScanMethod::Sequential);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> selective_scan_parallel(const Tensor<T>& abar,
                                                        const Tensor<T>& bbar, const Tensor<T>& C,
                                                        const Tensor<T>& u, Tensor<T> h0 = {},
                                                        int64_t chunk = 64) {
  return selective_scan(abar, bbar, C, u, std::move(h0), ScanMethod::Parallel, chunk);
}

}  // namespace slotssm
