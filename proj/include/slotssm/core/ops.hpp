#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "slotssm/core/tape.hpp"
#include "slotssm/core/tensor.hpp"

// Forward operator set. Every op checks shapes, verifies outputs are finite,
// and records a backward closure on the active tape when an input carries
// gradient. Broadcasting aligns trailing dimensions: sizes must match or be 1
// on one side.

namespace slotssm {

inline Shape broadcast_shapes(const char* op, const Shape& a, const Shape& b) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(op, ": shapes ", shape_str(a), " and ", shape_str(b), " do not broadcast");
    out[i] = std::max(da, db);
  }
  return out;
}

// Row-major strides of `in` aligned to the trailing dims of `out`, with 0 on
// broadcast dimensions.
inline std::vector<int64_t> bcast_strides(const Shape& out, const Shape& in) {
  std::vector<int64_t> st(out.size(), 0);
  int64_t stride = 1;
  for (size_t i = 0; i < in.size(); ++i) {
    size_t ii = in.size() - 1 - i;
    size_t oi = out.size() - 1 - i;
    st[oi] = (in[ii] == 1) ? 0 : stride;
    stride *= in[ii];
  }
  return st;
}

// Stride-coalesced plan for iterating a broadcast pair: adjacent dims merge
// when both input strides are proportional, so the innermost block is as large
// as possible and the per-block strides are constant.
struct BcastPlan {
  std::vector<int64_t> ext, sa, sb;  // outermost..innermost
  int64_t inner = 1;                 // extent of the innermost block
  int64_t sa_in = 0, sb_in = 0;      // strides within the block (0 or 1)
};

inline BcastPlan bcast_plan(const Shape& out, const Shape& ash, const Shape& bsh) {
  auto sa_full = bcast_strides(out, ash);
  auto sb_full = bcast_strides(out, bsh);
  BcastPlan p;
  // drop size-1 dims, coalesce from the right
  for (size_t d = 0; d < out.size(); ++d) {
    if (out[d] == 1) continue;
    if (!p.ext.empty()) {
      int64_t e = out[d];
      if (p.sa.back() == sa_full[d] * e && p.sb.back() == sb_full[d] * e) {
        p.ext.back() *= e;
        p.sa.back() = sa_full[d];
        p.sb.back() = sb_full[d];
        continue;
      }
    }
    p.ext.push_back(out[d]);
    p.sa.push_back(sa_full[d]);
    p.sb.push_back(sb_full[d]);
  }
  if (p.ext.empty()) {
    p.ext = {1};
    p.sa = {0};
    p.sb = {0};
  }
  // peel the innermost dim as the block when its strides are 0/1
  if ((p.sa.back() == 1 || p.sa.back() == 0) && (p.sb.back() == 1 || p.sb.back() == 0)) {
    p.inner = p.ext.back();
    p.sa_in = p.sa.back();
    p.sb_in = p.sb.back();
    p.ext.pop_back();
    p.sa.pop_back();
    p.sb.pop_back();
  }
  return p;
}

// body(io, ia, ib) called once per innermost BLOCK start; blocks advance the
// out index by plan.inner.
template <class F>
void bcast_for_blocks(const BcastPlan& p, F&& body) {
  size_t r = p.ext.size();
  int64_t blocks = 1;
  for (int64_t e : p.ext) blocks *= e;
  std::vector<int64_t> idx(r, 0);
  int64_t ia = 0, ib = 0;
  for (int64_t blk = 0; blk < blocks; ++blk) {
    body(blk * p.inner, ia, ib);
    for (size_t d = r; d-- > 0;) {
      idx[d]++;
      ia += p.sa[d];
      ib += p.sb[d];
      if (idx[d] < p.ext[d]) break;
      ia -= p.sa[d] * p.ext[d];
      ib -= p.sb[d] * p.ext[d];
      idx[d] = 0;
    }
  }
}

// body(i_out, i_a, i_b) over all positions of `out`, row-major order.
template <class F>
void for_each_bcast(const Shape& out, const Shape& ash, const Shape& bsh, F&& body) {
  auto p = bcast_plan(out, ash, bsh);
  bcast_for_blocks(p, [&](int64_t io, int64_t ia, int64_t ib) {
    for (int64_t i = 0; i < p.inner; ++i)
      body(io + i, ia + i * p.sa_in, ib + i * p.sb_in);
  });
}

// Sum `g` (shaped `gshape`) down to `target` along broadcast dims.
template <typename T>
std::vector<T> reduce_to_shape(const T* g, const Shape& gshape, const Shape& target) {
  std::vector<T> out(static_cast<size_t>(shape_numel(target)), T(0));
  auto st = bcast_strides(gshape, target);
  int64_t n = shape_numel(gshape);
  size_t r = gshape.size();
  std::vector<int64_t> idx(r, 0);
  int64_t it = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[static_cast<size_t>(it)] += g[i];
    for (size_t d = r; d-- > 0;) {
      idx[d]++;
      it += st[d];
      if (idx[d] < gshape[d]) break;
      it -= st[d] * gshape[d];
      idx[d] = 0;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// elementwise binary
// ---------------------------------------------------------------------------

enum class BinKind { Add, Sub, Mul, Div };

namespace detail {

// innermost block kernels, dispatched once per op on the (sa, sb) pattern so
// the hot loops have constant strides the compiler can vectorize
template <BinKind K, typename T>
void bin_block(T* y, const T* a, const T* b, int64_t n, int64_t sa, int64_t sb) {
  auto apply = [](T x, T z) {
    if constexpr (K == BinKind::Add) return x + z;
    else if constexpr (K == BinKind::Sub) return x - z;
    else if constexpr (K == BinKind::Mul) return x * z;
    else return x / z;
  };
  if (sa == 1 && sb == 1) {
    for (int64_t i = 0; i < n; ++i) y[i] = apply(a[i], b[i]);
  } else if (sa == 1) {
    T bv = b[0];
    for (int64_t i = 0; i < n; ++i) y[i] = apply(a[i], bv);
  } else if (sb == 1) {
    T av = a[0];
    for (int64_t i = 0; i < n; ++i) y[i] = apply(av, b[i]);
  } else {
    T v = apply(a[0], b[0]);
    for (int64_t i = 0; i < n; ++i) y[i] = v;
  }
}

// dL/da contribution for one block: either dense into da (sa==1) or reduced
// into a single accumulator (sa==0). partial(i) yields g * d(apply)/da.
template <typename T, class P>
void bin_accum_block(T* da, int64_t n, int64_t sa, P&& partial) {
  if (sa == 1) {
    for (int64_t i = 0; i < n; ++i) da[i] += partial(i);
  } else {
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) acc += partial(i);
    da[0] += acc;
  }
}

}  // namespace detail

template <typename T>
Tensor<T> binary(const char* name, BinKind kind, const Tensor<T>& a, const Tensor<T>& b) {
  Shape os = broadcast_shapes(name, a.shape(), b.shape());
  Tensor<T> y(os);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();
  auto plan = bcast_plan(os, a.shape(), b.shape());
  auto run = [&](auto kc) {
    constexpr BinKind K = decltype(kc)::value;
    bcast_for_blocks(plan, [&](int64_t io, int64_t ia, int64_t ib) {
      detail::bin_block<K>(py + io, pa + ia, pb + ib, plan.inner, plan.sa_in, plan.sb_in);
    });
  };
  switch (kind) {
    case BinKind::Add: run(std::integral_constant<BinKind, BinKind::Add>{}); break;
    case BinKind::Sub: run(std::integral_constant<BinKind, BinKind::Sub>{}); break;
    case BinKind::Mul: run(std::integral_constant<BinKind, BinKind::Mul>{}); break;
    case BinKind::Div: run(std::integral_constant<BinKind, BinKind::Div>{}); break;
  }
  check_finite(name, y);
  if (tracing<T>({&a, &b})) {
    y.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, yc = y;
    std::string op = name;
    Tape<T>::current()->record([op, kind, ac, bc, yc, plan]() mutable {
      if (!yc.has_grad()) return;
      const T* g = yc.grad().data();
      const T* pa = ac.ptr();
      const T* pb = bc.ptr();
      int64_t in = plan.inner, sa = plan.sa_in, sb = plan.sb_in;
      if (ac.requires_grad()) {
        std::vector<T> da(static_cast<size_t>(ac.numel()), T(0));
        bcast_for_blocks(plan, [&](int64_t io, int64_t ia, int64_t ib) {
          const T* gb = g + io;
          const T* bbk = pb + ib;
          switch (kind) {
            case BinKind::Add:
            case BinKind::Sub:
              detail::bin_accum_block(da.data() + ia, in, sa, [&](int64_t i) { return gb[i]; });
              break;
            case BinKind::Mul:
              detail::bin_accum_block(da.data() + ia, in, sa,
                                      [&](int64_t i) { return gb[i] * bbk[i * sb]; });
              break;
            case BinKind::Div:
              detail::bin_accum_block(da.data() + ia, in, sa,
                                      [&](int64_t i) { return gb[i] / bbk[i * sb]; });
              break;
          }
        });
        ac.accumulate_grad(op.c_str(), da.data(), ac.numel());
      }
      if (bc.requires_grad()) {
        std::vector<T> db(static_cast<size_t>(bc.numel()), T(0));
        bcast_for_blocks(plan, [&](int64_t io, int64_t ia, int64_t ib) {
          const T* gb = g + io;
          const T* abk = pa + ia;
          const T* bbk = pb + ib;
          switch (kind) {
            case BinKind::Add:
              detail::bin_accum_block(db.data() + ib, in, sb, [&](int64_t i) { return gb[i]; });
              break;
            case BinKind::Sub:
              detail::bin_accum_block(db.data() + ib, in, sb, [&](int64_t i) { return -gb[i]; });
              break;
            case BinKind::Mul:
              detail::bin_accum_block(db.data() + ib, in, sb,
                                      [&](int64_t i) { return gb[i] * abk[i * sa]; });
              break;
            case BinKind::Div:
              detail::bin_accum_block(db.data() + ib, in, sb, [&](int64_t i) {
                T bv = bbk[i * sb];
                return -gb[i] * abk[i * sa] / (bv * bv);
              });
              break;
          }
        });
        bc.accumulate_grad(op.c_str(), db.data(), bc.numel());
      }
    });
  }
  return y;
}

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary("add", BinKind::Add, a, b); }
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary("sub", BinKind::Sub, a, b); }
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary("mul", BinKind::Mul, a, b); }
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary("div", BinKind::Div, a, b); }

// ---------------------------------------------------------------------------
// elementwise unary
// ---------------------------------------------------------------------------

// dy/dx expressed in terms of (x, y) so backward reuses the forward output.
template <typename T, class Fwd, class Bwd>
Tensor<T> unary(const char* name, const Tensor<T>& x, Fwd fwd, Bwd bwd) {
  Tensor<T> y(x.shape());
  const T* px = x.ptr();
  T* py = y.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) py[i] = fwd(px[i]);
  check_finite(name, y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    std::string op = name;
    Tape<T>::current()->record([op, xc, yc, bwd]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      const T* px = xc.ptr();
      const T* py = yc.ptr();
      int64_t n = xc.numel();
      std::vector<T> dx(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) dx[static_cast<size_t>(i)] = g[i] * bwd(px[i], py[i]);
      xc.accumulate_grad(op.c_str(), dx.data(), n);
    });
  }
  return y;
}

namespace detail {

template <typename T>
using ArrMap = Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>;
template <typename T>
using CArrMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

}  // namespace detail

// exp/sigmoid/tanh/silu/softplus run through Eigen's packet math; the scan's
// discretization calls exp over [S,T,D,N]-sized arrays every step.
template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  detail::ArrMap<T>(y.ptr(), y.numel()) = detail::CArrMap<T>(x.ptr(), x.numel()).exp();
  check_finite("exp", y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      const T* py = yc.ptr();
      std::vector<T> dx(static_cast<size_t>(xc.numel()));
      for (int64_t i = 0; i < xc.numel(); ++i) dx[static_cast<size_t>(i)] = g[i] * py[i];
      xc.accumulate_grad("exp", dx.data(), xc.numel());
    });
  }
  return y;
}

template <typename T>
Tensor<T> expm1(const Tensor<T>& x) {
  return unary("expm1", x, [](T v) { return std::expm1(v); }, [](T, T y) { return y + T(1); });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  return unary("neg", x, [](T v) { return -v; }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  detail::ArrMap<T>(y.ptr(), y.numel()) = detail::CArrMap<T>(x.ptr(), x.numel()).logistic();
  check_finite("sigmoid", y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      const T* py = yc.ptr();
      std::vector<T> dx(static_cast<size_t>(xc.numel()));
      for (int64_t i = 0; i < xc.numel(); ++i)
        dx[static_cast<size_t>(i)] = g[i] * py[i] * (T(1) - py[i]);
      xc.accumulate_grad("sigmoid", dx.data(), xc.numel());
    });
  }
  return y;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  detail::ArrMap<T>(y.ptr(), y.numel()) = detail::CArrMap<T>(x.ptr(), x.numel()).tanh();
  check_finite("tanh", y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      const T* py = yc.ptr();
      std::vector<T> dx(static_cast<size_t>(xc.numel()));
      for (int64_t i = 0; i < xc.numel(); ++i)
        dx[static_cast<size_t>(i)] = g[i] * (T(1) - py[i] * py[i]);
      xc.accumulate_grad("tanh", dx.data(), xc.numel());
    });
  }
  return y;
}

template <typename T>
Tensor<T> silu(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  {
    detail::CArrMap<T> xa(x.ptr(), x.numel());
    detail::ArrMap<T>(y.ptr(), y.numel()) = xa * xa.logistic();
  }
  check_finite("silu", y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      int64_t n = xc.numel();
      AlignedVec<T> dx(static_cast<size_t>(n));
      detail::CArrMap<T> xa(xc.ptr(), n);
      detail::CArrMap<T> ga(g.data(), n);
      detail::ArrMap<T> da(dx.data(), n);
      auto s = xa.logistic();
      da = ga * (s + xa * s * (T(1) - s));
      xc.accumulate_grad("silu", dx.data(), n);
    });
  }
  return y;
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& x) {
  return unary("softplus", x,
               [](T v) {
                 if (v > T(30)) return v;
                 if (v < T(-30)) return std::exp(v);
                 return std::log1p(std::exp(v));
               },
               [](T v, T) { return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                             : std::exp(v) / (T(1) + std::exp(v)); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary("relu", x, [](T v) { return v > T(0) ? v : T(0); },
               [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  return unary("mul_scalar", x, [c](T v) { return v * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  return unary("add_scalar", x, [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

// Shares storage; gradients alias automatically, so no tape node is needed.
template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    fail("reshape: ", shape_str(x.shape()), " to ", shape_str(shape), " changes element count");
  Tensor<T> y = x;
  return y.with_shape(std::move(shape));
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x, const std::vector<int>& perm) {
  int r = x.rank();
  if (static_cast<int>(perm.size()) != r) fail("transpose: perm rank mismatch");
  Shape os(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
  Tensor<T> y(os);
  std::vector<int64_t> xstr(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    xstr[static_cast<size_t>(i)] = xstr[static_cast<size_t>(i) + 1] * x.dim(i + 1);
  std::vector<int64_t> src_stride(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) src_stride[static_cast<size_t>(i)] = xstr[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  const T* px = x.ptr();
  T* py = y.ptr();
  int64_t n = x.numel();
  if (r >= 1 && perm[static_cast<size_t>(r - 1)] == r - 1) {
    // last dim stays innermost: move whole rows
    int64_t row = os[static_cast<size_t>(r - 1)];
    int64_t rows = n / row;
    std::vector<int64_t> idx(static_cast<size_t>(r - 1), 0);
    int64_t is = 0;
    for (int64_t ro = 0; ro < rows; ++ro) {
      std::memcpy(py + ro * row, px + is, static_cast<size_t>(row) * sizeof(T));
      for (int d = r - 1; d-- > 0;) {
        idx[static_cast<size_t>(d)]++;
        is += src_stride[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
        is -= src_stride[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
        idx[static_cast<size_t>(d)] = 0;
      }
    }
  } else {
    std::vector<int64_t> idx(static_cast<size_t>(r), 0);
    int64_t is = 0;
    for (int64_t io = 0; io < n; ++io) {
      py[io] = px[is];
      for (int d = r; d-- > 0;) {
        idx[static_cast<size_t>(d)]++;
        is += src_stride[static_cast<size_t>(d)];
        if (idx[static_cast<size_t>(d)] < os[static_cast<size_t>(d)]) break;
        is -= src_stride[static_cast<size_t>(d)] * os[static_cast<size_t>(d)];
        idx[static_cast<size_t>(d)] = 0;
      }
    }
  }
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    std::vector<int> inv(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) inv[static_cast<size_t>(perm[static_cast<size_t>(i)])] = i;
    Tape<T>::current()->record([xc, yc, inv]() mutable {
      if (!yc.has_grad()) return;
      Tensor<T> gt(yc.shape(), std::vector<T>(yc.grad().begin(), yc.grad().end()));
      Tensor<T> gx = transpose(gt, inv);  // no tape active inside backward of outer tape? guard below
      xc.accumulate_grad("transpose", gx.ptr(), gx.numel());
    });
  }
  return y;
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& shape) {
  Shape os = broadcast_shapes("broadcast_to", x.shape(), shape);
  if (os != shape) fail("broadcast_to: ", shape_str(x.shape()), " cannot broadcast to ", shape_str(shape));
  Tensor<T> y(os);
  const T* px = x.ptr();
  T* py = y.ptr();
  for_each_bcast(os, x.shape(), x.shape(), [&](int64_t io, int64_t ia, int64_t) { py[io] = px[ia]; });
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc]() mutable {
      if (!yc.has_grad()) return;
      auto red = reduce_to_shape(yc.grad().data(), yc.shape(), xc.shape());
      xc.accumulate_grad("broadcast_to", red.data(), static_cast<int64_t>(red.size()));
    });
  }
  return y;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) fail("concat: no inputs");
  int r = parts[0].rank();
  if (axis < 0) axis += r;
  Shape os = parts[0].shape();
  int64_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != r) fail("concat: rank mismatch");
    for (int i = 0; i < r; ++i)
      if (i != axis && p.dim(i) != os[static_cast<size_t>(i)])
        fail("concat: shape mismatch ", shape_str(p.shape()), " vs ", shape_str(parts[0].shape()));
    total += p.dim(axis);
  }
  os[static_cast<size_t>(axis)] = total;
  Tensor<T> y(os);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= os[static_cast<size_t>(i)];
  for (int i = axis + 1; i < r; ++i) inner *= os[static_cast<size_t>(i)];
  T* py = y.ptr();
  int64_t off = 0;
  for (const auto& p : parts) {
    int64_t len = p.dim(axis) * inner;
    const T* pp = p.ptr();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(py + o * total * inner + off, pp + o * len, static_cast<size_t>(len) * sizeof(T));
    off += len;
  }
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (Tape<T>::current() && track) {
    y.set_requires_grad(true);
    std::vector<Tensor<T>> pc = parts;
    Tensor<T> yc = y;
    Tape<T>::current()->record([pc, yc, outer, inner, total, axis]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      int64_t off = 0;
      for (auto& p : pc) {
        int64_t len = p.dim(axis) * inner;
        if (p.requires_grad()) {
          std::vector<T> dp(static_cast<size_t>(p.numel()));
          for (int64_t o = 0; o < outer; ++o)
            std::memcpy(dp.data() + o * len, g.data() + o * total * inner + off,
                        static_cast<size_t>(len) * sizeof(T));
          p.accumulate_grad("concat", dp.data(), p.numel());
        }
        off += len;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (start < 0 || len <= 0 || start + len > x.dim(axis))
    fail("slice: range [", start, ",", start + len, ") out of bounds for axis ", axis, " of ",
         shape_str(x.shape()));
  Shape os = x.shape();
  os[static_cast<size_t>(axis)] = len;
  Tensor<T> y(os);
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  int64_t in_len = x.dim(axis) * inner;
  int64_t out_len = len * inner;
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(py + o * out_len, px + o * in_len + start * inner,
                static_cast<size_t>(out_len) * sizeof(T));
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc, outer, inner, in_len, out_len, start]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      std::vector<T> dx(static_cast<size_t>(xc.numel()), T(0));
      for (int64_t o = 0; o < outer; ++o)
        std::memcpy(dx.data() + o * in_len + start * inner, g.data() + o * out_len,
                    static_cast<size_t>(out_len) * sizeof(T));
      xc.accumulate_grad("slice", dx.data(), xc.numel());
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x, const std::vector<int>& axes_in, bool keepdims = false) {
  int r = x.rank();
  std::vector<bool> reduce(static_cast<size_t>(r), false);
  for (int a : axes_in) {
    if (a < 0) a += r;
    if (a < 0 || a >= r) fail("sum: axis out of range");
    reduce[static_cast<size_t>(a)] = true;
  }
  Shape kshape = x.shape();
  for (int i = 0; i < r; ++i)
    if (reduce[static_cast<size_t>(i)]) kshape[static_cast<size_t>(i)] = 1;
  Tensor<T> y(kshape, T(0));
  const T* px = x.ptr();
  T* py = y.ptr();
  auto st = bcast_strides(x.shape(), kshape);
  int64_t n = x.numel();
  std::vector<int64_t> idx(static_cast<size_t>(r), 0);
  int64_t it = 0;
  for (int64_t i = 0; i < n; ++i) {
    py[it] += px[i];
    for (int d = r; d-- > 0;) {
      idx[static_cast<size_t>(d)]++;
      it += st[static_cast<size_t>(d)];
      if (idx[static_cast<size_t>(d)] < x.dim(d)) break;
      it -= st[static_cast<size_t>(d)] * x.dim(d);
      idx[static_cast<size_t>(d)] = 0;
    }
  }
  check_finite("sum", y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Shape ks = kshape;
    Tape<T>::current()->record([xc, yc, ks]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      std::vector<T> dx(static_cast<size_t>(xc.numel()));
      auto st = bcast_strides(xc.shape(), ks);
      int r = xc.rank();
      std::vector<int64_t> idx(static_cast<size_t>(r), 0);
      int64_t it = 0;
      for (int64_t i = 0; i < xc.numel(); ++i) {
        dx[static_cast<size_t>(i)] = g[it];
        for (int d = r; d-- > 0;) {
          idx[static_cast<size_t>(d)]++;
          it += st[static_cast<size_t>(d)];
          if (idx[static_cast<size_t>(d)] < xc.dim(d)) break;
          it -= st[static_cast<size_t>(d)] * xc.dim(d);
          idx[static_cast<size_t>(d)] = 0;
        }
      }
      xc.accumulate_grad("sum", dx.data(), xc.numel());
    });
  }
  if (keepdims) return y;
  Shape os;
  for (int i = 0; i < r; ++i)
    if (!reduce[static_cast<size_t>(i)]) os.push_back(x.dim(i));
  if (os.empty()) os.push_back(1);
  return reshape(y, os);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x, const std::vector<int>& axes, bool keepdims = false) {
  int64_t cnt = 1;
  int r = x.rank();
  for (int a : axes) cnt *= x.dim(a < 0 ? a + r : a);
  return mul_scalar(sum(x, axes, keepdims), T(1) / static_cast<T>(cnt));
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  std::vector<int> axes(static_cast<size_t>(x.rank()));
  std::iota(axes.begin(), axes.end(), 0);
  return sum(x, axes);
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// softmax / layer norm
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, int axis) {
  int r = x.rank();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) fail("softmax: axis out of range for ", shape_str(x.shape()));
  int64_t outer = 1, inner = 1, len = x.dim(axis);
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Tensor<T> y(x.shape());
  const T* px = x.ptr();
  T* py = y.ptr();
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t in = 0; in < inner; ++in) {
      const T* xs = px + o * len * inner + in;
      T* ys = py + o * len * inner + in;
      T m = xs[0];
      for (int64_t l = 1; l < len; ++l) m = std::max(m, xs[l * inner]);
      T s = T(0);
      for (int64_t l = 0; l < len; ++l) {
        T e = std::exp(xs[l * inner] - m);
        ys[l * inner] = e;
        s += e;
      }
      T invs = T(1) / s;
      for (int64_t l = 0; l < len; ++l) ys[l * inner] *= invs;
    }
  }
  check_finite("softmax", y);
  if (tracing<T>({&x})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, yc = y;
    Tape<T>::current()->record([xc, yc, outer, inner, len]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      const T* py = yc.ptr();
      std::vector<T> dx(static_cast<size_t>(xc.numel()));
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
          int64_t base = o * len * inner + in;
          T dot = T(0);
          for (int64_t l = 0; l < len; ++l) dot += g[base + l * inner] * py[base + l * inner];
          for (int64_t l = 0; l < len; ++l)
            dx[static_cast<size_t>(base + l * inner)] =
                py[base + l * inner] * (g[base + l * inner] - dot);
        }
      }
      xc.accumulate_grad("softmax", dx.data(), xc.numel());
    });
  }
  return y;
}

// Normalization over the last axis with learnable scale/shift, epsilon 1e-5.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  int64_t d = x.dim(-1);
  if (gamma.numel() != d || beta.numel() != d)
    fail("layer_norm: scale/shift length must be ", d, ", got ", gamma.numel(), "/", beta.numel());
  int64_t rows = x.numel() / d;
  Tensor<T> y(x.shape());
  std::vector<T> invstd(static_cast<size_t>(rows)), meanv(static_cast<size_t>(rows));
  const T* px = x.ptr();
  const T* pg = gamma.ptr();
  const T* pb = beta.ptr();
  T* py = y.ptr();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xs = px + r * d;
    T* ys = py + r * d;
    T mu = T(0);
    for (int64_t i = 0; i < d; ++i) mu += xs[i];
    mu /= static_cast<T>(d);
    T var = T(0);
    for (int64_t i = 0; i < d; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= static_cast<T>(d);
    T inv = T(1) / std::sqrt(var + eps);
    meanv[static_cast<size_t>(r)] = mu;
    invstd[static_cast<size_t>(r)] = inv;
    for (int64_t i = 0; i < d; ++i) ys[i] = (xs[i] - mu) * inv * pg[i] + pb[i];
  }
  check_finite("layer_norm", y);
  if (tracing<T>({&x, &gamma, &beta})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, gc = gamma, bc = beta, yc = y;
    Tape<T>::current()->record([xc, gc, bc, yc, rows, d, meanv, invstd]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      const T* px = xc.ptr();
      const T* pg = gc.ptr();
      std::vector<T> dx(static_cast<size_t>(xc.numel()));
      std::vector<T> dgamma(static_cast<size_t>(d), T(0)), dbeta(static_cast<size_t>(d), T(0));
      for (int64_t r = 0; r < rows; ++r) {
        const T* xs = px + r * d;
        const T* gs = g.data() + r * d;
        T mu = meanv[static_cast<size_t>(r)];
        T inv = invstd[static_cast<size_t>(r)];
        T sum_gg = T(0), sum_ggx = T(0);
        for (int64_t i = 0; i < d; ++i) {
          T xhat = (xs[i] - mu) * inv;
          T gg = gs[i] * pg[i];
          sum_gg += gg;
          sum_ggx += gg * xhat;
          dgamma[static_cast<size_t>(i)] += gs[i] * xhat;
          dbeta[static_cast<size_t>(i)] += gs[i];
        }
        for (int64_t i = 0; i < d; ++i) {
          T xhat = (xs[i] - mu) * inv;
          T gg = gs[i] * pg[i];
          dx[static_cast<size_t>(r * d + i)] =
              inv * (gg - (sum_gg + xhat * sum_ggx) / static_cast<T>(d));
        }
      }
      if (xc.requires_grad()) xc.accumulate_grad("layer_norm", dx.data(), xc.numel());
      if (gc.requires_grad()) gc.accumulate_grad("layer_norm", dgamma.data(), d);
      if (bc.requires_grad()) bc.accumulate_grad("layer_norm", dbeta.data(), d);
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// embedding lookup
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const IntArray& idx) {
  if (table.rank() != 2) fail("embedding: table must be rank 2, got ", shape_str(table.shape()));
  int64_t v = table.dim(0), d = table.dim(1);
  Shape os = idx.shape;
  os.push_back(d);
  Tensor<T> y(os);
  const T* pt = table.ptr();
  T* py = y.ptr();
  for (int64_t i = 0; i < idx.numel(); ++i) {
    int32_t row = idx.data[static_cast<size_t>(i)];
    if (row < 0 || row >= v) fail("embedding: index ", row, " out of range [0,", v, ")");
    std::memcpy(py + i * d, pt + static_cast<int64_t>(row) * d, static_cast<size_t>(d) * sizeof(T));
  }
  if (tracing<T>({&table})) {
    y.set_requires_grad(true);
    Tensor<T> tc = table, yc = y;
    IntArray ic = idx;
    Tape<T>::current()->record([tc, yc, ic, d]() mutable {
      if (!yc.has_grad()) return;
      auto g = yc.grad();
      std::vector<T> dt(static_cast<size_t>(tc.numel()), T(0));
      for (int64_t i = 0; i < ic.numel(); ++i) {
        int64_t row = ic.data[static_cast<size_t>(i)];
        for (int64_t j = 0; j < d; ++j) dt[static_cast<size_t>(row * d + j)] += g[i * d + j];
      }
      tc.accumulate_grad("embedding", dt.data(), tc.numel());
    });
  }
  return y;
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    fail("mse: shape mismatch ", shape_str(pred.shape()), " vs ", shape_str(target.shape()));
  int64_t n = pred.numel();
  const T* pp = pred.ptr();
  const T* pt = target.ptr();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T dv = pp[i] - pt[i];
    acc += dv * dv;
  }
  Tensor<T> y = Tensor<T>::scalar(acc / static_cast<T>(n));
  check_finite("mse", y);
  if (tracing<T>({&pred, &target})) {
    y.set_requires_grad(true);
    Tensor<T> pc = pred, tc = target, yc = y;
    Tape<T>::current()->record([pc, tc, yc, n]() mutable {
      if (!yc.has_grad()) return;
      T g = yc.grad()[0];
      const T* pp = pc.ptr();
      const T* pt = tc.ptr();
      std::vector<T> d(static_cast<size_t>(n));
      T scale = g * T(2) / static_cast<T>(n);
      for (int64_t i = 0; i < n; ++i) d[static_cast<size_t>(i)] = scale * (pp[i] - pt[i]);
      if (pc.requires_grad()) pc.accumulate_grad("mse", d.data(), n);
      if (tc.requires_grad()) {
        for (auto& v : d) v = -v;
        tc.accumulate_grad("mse", d.data(), n);
      }
    });
  }
  return y;
}

// mean over elements of max(x,0) - x*z + log1p(exp(-|x|))
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.shape() != targets.shape())
    fail("bce_with_logits: shape mismatch ", shape_str(logits.shape()), " vs ",
         shape_str(targets.shape()));
  int64_t n = logits.numel();
  const T* px = logits.ptr();
  const T* pz = targets.ptr();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    T x = px[i];
    acc += std::max(x, T(0)) - x * pz[i] + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> y = Tensor<T>::scalar(acc / static_cast<T>(n));
  check_finite("bce_with_logits", y);
  if (tracing<T>({&logits})) {
    y.set_requires_grad(true);
    Tensor<T> xc = logits, zc = targets, yc = y;
    Tape<T>::current()->record([xc, zc, yc, n]() mutable {
      if (!yc.has_grad()) return;
      T g = yc.grad()[0] / static_cast<T>(n);
      const T* px = xc.ptr();
      const T* pz = zc.ptr();
      std::vector<T> d(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) {
        T x = px[i];
        T s = x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
        d[static_cast<size_t>(i)] = g * (s - pz[i]);
      }
      xc.accumulate_grad("bce_with_logits", d.data(), n);
    });
  }
  return y;
}

// logits [..., C] against class indices; mean over rows
template <typename T>
Tensor<T> ce_with_logits(const Tensor<T>& logits, const IntArray& classes) {
  int64_t c = logits.dim(-1);
  int64_t rows = logits.numel() / c;
  if (classes.numel() != rows)
    fail("ce_with_logits: ", rows, " rows vs ", classes.numel(), " class labels");
  const T* px = logits.ptr();
  T acc = T(0);
  for (int64_t r = 0; r < rows; ++r) {
    int32_t cls = classes.data[static_cast<size_t>(r)];
    if (cls < 0 || cls >= c) fail("ce_with_logits: class ", cls, " out of range [0,", c, ")");
    const T* xs = px + r * c;
    T m = xs[0];
    for (int64_t i = 1; i < c; ++i) m = std::max(m, xs[i]);
    T s = T(0);
    for (int64_t i = 0; i < c; ++i) s += std::exp(xs[i] - m);
    acc += std::log(s) + m - xs[cls];
  }
  Tensor<T> y = Tensor<T>::scalar(acc / static_cast<T>(rows));
  check_finite("ce_with_logits", y);
  if (tracing<T>({&logits})) {
    y.set_requires_grad(true);
    Tensor<T> xc = logits, yc = y;
    IntArray cc = classes;
    Tape<T>::current()->record([xc, yc, cc, rows, c]() mutable {
      if (!yc.has_grad()) return;
      T g = yc.grad()[0] / static_cast<T>(rows);
      const T* px = xc.ptr();
      std::vector<T> d(static_cast<size_t>(xc.numel()));
      for (int64_t r = 0; r < rows; ++r) {
        const T* xs = px + r * c;
        T m = xs[0];
        for (int64_t i = 1; i < c; ++i) m = std::max(m, xs[i]);
        T s = T(0);
        for (int64_t i = 0; i < c; ++i) s += std::exp(xs[i] - m);
        for (int64_t i = 0; i < c; ++i)
          d[static_cast<size_t>(r * c + i)] = g * (std::exp(xs[i] - m) / s);
        d[static_cast<size_t>(r * c + cc.data[static_cast<size_t>(r)])] -= g;
      }
      xc.accumulate_grad("ce_with_logits", d.data(), xc.numel());
    });
  }
  return y;
}

}  // namespace slotssm
