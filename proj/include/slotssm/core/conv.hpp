#pragma once

#include "slotssm/core/ops.hpp"

namespace slotssm {

// Depthwise causal 1-D convolution along the time axis.
// x: [B, T, D], w: [D, kw] with w[d][j] the tap at lag j, optional bias [D]:
//   y[b,t,d] = sum_j w[d,j] * x[b,t-j,d] + bias[d]   (x[t<0] = 0)
// Output at time t never reads inputs later than t.
template <typename T>
Tensor<T> conv1d_causal(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  if (x.rank() != 3 || w.rank() != 2)
    fail("conv1d_causal: expected x [B,T,D] and w [D,kw], got ", shape_str(x.shape()), " and ",
         shape_str(w.shape()));
  int64_t b = x.dim(0), t = x.dim(1), d = x.dim(2), kw = w.dim(1);
  if (w.dim(0) != d) fail("conv1d_causal: weight channels ", w.dim(0), " vs input channels ", d);
  if (bias.defined() && bias.numel() != d)
    fail("conv1d_causal: bias length ", bias.numel(), " vs channels ", d);
  Tensor<T> y(x.shape());
  const T* px = x.ptr();
  const T* pw = w.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static)
  for (int64_t bi = 0; bi < b; ++bi) {
    for (int64_t ti = 0; ti < t; ++ti) {
      T* ys = py + (bi * t + ti) * d;
      if (bias.defined()) {
        const T* pb = bias.ptr();
        for (int64_t di = 0; di < d; ++di) ys[di] = pb[di];
      } else {
        for (int64_t di = 0; di < d; ++di) ys[di] = T(0);
      }
      for (int64_t j = 0; j < kw && j <= ti; ++j) {
        const T* xs = px + (bi * t + (ti - j)) * d;
        for (int64_t di = 0; di < d; ++di) ys[di] += pw[di * kw + j] * xs[di];
      }
    }
  }
  check_finite("conv1d_causal", y);
  if (tracing<T>({&x, &w, &bias})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = bias, yc = y;
    Tape<T>::current()->record([xc, wc, bc, yc, b, t, d, kw]() mutable {
      if (!yc.has_grad()) return;
      const T* g = yc.grad().data();
      const T* px = xc.ptr();
      const T* pw = wc.ptr();
      if (xc.requires_grad()) {
        std::vector<T> dx(static_cast<size_t>(xc.numel()), T(0));
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t j = 0; j < kw && j <= ti; ++j) {
              const T* gs = g + (bi * t + ti) * d;
              T* xs = dx.data() + (bi * t + (ti - j)) * d;
              for (int64_t di = 0; di < d; ++di) xs[di] += pw[di * kw + j] * gs[di];
            }
        xc.accumulate_grad("conv1d_causal", dx.data(), xc.numel());
      }
      if (wc.requires_grad()) {
        std::vector<T> dw(static_cast<size_t>(wc.numel()), T(0));
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t ti = 0; ti < t; ++ti)
            for (int64_t j = 0; j < kw && j <= ti; ++j) {
              const T* gs = g + (bi * t + ti) * d;
              const T* xs = px + (bi * t + (ti - j)) * d;
              for (int64_t di = 0; di < d; ++di) dw[static_cast<size_t>(di * kw + j)] += gs[di] * xs[di];
            }
        wc.accumulate_grad("conv1d_causal", dw.data(), wc.numel());
      }
      if (bc.defined() && bc.requires_grad()) {
        std::vector<T> db(static_cast<size_t>(d), T(0));
        for (int64_t i = 0; i < b * t; ++i)
          for (int64_t di = 0; di < d; ++di) db[static_cast<size_t>(di)] += g[i * d + di];
        bc.accumulate_grad("conv1d_causal", db.data(), d);
      }
    });
  }
  return y;
}

// Transposed 2-D convolution (NCHW), kernel [Cin, Cout, kh, kw].
//   Hout = (H-1)*stride - 2*pad + kh + out_pad
// Computed gather-style per output pixel, so accumulation order is fixed.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           int64_t stride, int64_t pad, int64_t out_pad) {
  if (x.rank() != 4 || w.rank() != 4)
    fail("conv_transpose2d: expected x [B,C,H,W] and w [Cin,Cout,kh,kw], got ",
         shape_str(x.shape()), " and ", shape_str(w.shape()));
  int64_t b = x.dim(0), ci = x.dim(1), h = x.dim(2), wdt = x.dim(3);
  int64_t co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != ci) fail("conv_transpose2d: weight Cin ", w.dim(0), " vs input channels ", ci);
  if (bias.defined() && bias.numel() != co)
    fail("conv_transpose2d: bias length ", bias.numel(), " vs Cout ", co);
  int64_t ho = (h - 1) * stride - 2 * pad + kh + out_pad;
  int64_t wo = (wdt - 1) * stride - 2 * pad + kw + out_pad;
  if (ho <= 0 || wo <= 0) fail("conv_transpose2d: non-positive output size");
  Tensor<T> y(Shape{b, co, ho, wo});

  // valid (kernel tap, input coord) pairs per output coordinate
  auto taps = [&](int64_t out_len, int64_t in_len, int64_t k) {
    std::vector<std::vector<std::pair<int64_t, int64_t>>> v(static_cast<size_t>(out_len));
    for (int64_t o = 0; o < out_len; ++o)
      for (int64_t kk = 0; kk < k; ++kk) {
        int64_t num = o + pad - kk;
        if (num < 0 || num % stride) continue;
        int64_t in = num / stride;
        if (in >= 0 && in < in_len) v[static_cast<size_t>(o)].emplace_back(kk, in);
      }
    return v;
  };
  auto htaps = taps(ho, h, kh);
  auto wtaps = taps(wo, wdt, kw);

  const T* px = x.ptr();
  const T* pw = w.ptr();
  T* py = y.ptr();
#pragma omp parallel for schedule(static) collapse(2)
  for (int64_t bi = 0; bi < b; ++bi)
    for (int64_t oc = 0; oc < co; ++oc) {
      T bv = bias.defined() ? bias.ptr()[oc] : T(0);
      for (int64_t oh = 0; oh < ho; ++oh)
        for (int64_t ow = 0; ow < wo; ++ow) {
          T acc = bv;
          for (auto [khh, ih] : htaps[static_cast<size_t>(oh)])
            for (auto [kww, iw] : wtaps[static_cast<size_t>(ow)])
              for (int64_t ic = 0; ic < ci; ++ic)
                acc += px[((bi * ci + ic) * h + ih) * wdt + iw] *
                       pw[((ic * co + oc) * kh + khh) * kw + kww];
          py[((bi * co + oc) * ho + oh) * wo + ow] = acc;
        }
    }
  check_finite("conv_transpose2d", y);

  if (tracing<T>({&x, &w, &bias})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = bias, yc = y;
    Tape<T>::current()->record([xc, wc, bc, yc, b, ci, co, h, wdt, ho, wo, kh, kw, stride,
                                pad]() mutable {
      if (!yc.has_grad()) return;
      const T* g = yc.grad().data();
      const T* px = xc.ptr();
      const T* pw = wc.ptr();
      if (xc.requires_grad()) {
        std::vector<T> dx(static_cast<size_t>(xc.numel()), T(0));
#pragma omp parallel for schedule(static) collapse(2)
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t ic = 0; ic < ci; ++ic)
            for (int64_t ih = 0; ih < h; ++ih)
              for (int64_t iw = 0; iw < wdt; ++iw) {
                T acc = T(0);
                for (int64_t khh = 0; khh < kh; ++khh) {
                  int64_t oh = ih * stride - pad + khh;
                  if (oh < 0 || oh >= ho) continue;
                  for (int64_t kww = 0; kww < kw; ++kww) {
                    int64_t ow = iw * stride - pad + kww;
                    if (ow < 0 || ow >= wo) continue;
                    for (int64_t oc = 0; oc < co; ++oc)
                      acc += g[((bi * co + oc) * ho + oh) * wo + ow] *
                             pw[((ic * co + oc) * kh + khh) * kw + kww];
                  }
                }
                dx[static_cast<size_t>(((bi * ci + ic) * h + ih) * wdt + iw)] = acc;
              }
        xc.accumulate_grad("conv_transpose2d", dx.data(), xc.numel());
      }
      if (wc.requires_grad()) {
        std::vector<T> dw(static_cast<size_t>(wc.numel()), T(0));
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t ic = 0; ic < ci; ++ic)
            for (int64_t oc = 0; oc < co; ++oc)
              for (int64_t khh = 0; khh < kh; ++khh)
                for (int64_t kww = 0; kww < kw; ++kww) {
                  T acc = T(0);
                  for (int64_t ih = 0; ih < h; ++ih) {
                    int64_t oh = ih * stride - pad + khh;
                    if (oh < 0 || oh >= ho) continue;
                    for (int64_t iw = 0; iw < wdt; ++iw) {
                      int64_t ow = iw * stride - pad + kww;
                      if (ow < 0 || ow >= wo) continue;
                      acc += px[((bi * ci + ic) * h + ih) * wdt + iw] *
                             g[((bi * co + oc) * ho + oh) * wo + ow];
                    }
                  }
                  dw[static_cast<size_t>(((ic * co + oc) * kh + khh) * kw + kww)] += acc;
                }
        wc.accumulate_grad("conv_transpose2d", dw.data(), wc.numel());
      }
      if (bc.defined() && bc.requires_grad()) {
        std::vector<T> db(static_cast<size_t>(co), T(0));
        for (int64_t bi = 0; bi < b; ++bi)
          for (int64_t oc = 0; oc < co; ++oc) {
            T acc = T(0);
            for (int64_t i = 0; i < ho * wo; ++i) acc += g[(bi * co + oc) * ho * wo + i];
            db[static_cast<size_t>(oc)] += acc;
          }
        bc.accumulate_grad("conv_transpose2d", db.data(), co);
      }
    });
  }
  return y;
}

}  // namespace slotssm
