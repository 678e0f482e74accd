#pragma once

#include <Eigen/Core>

#include "slotssm/core/ops.hpp"

namespace slotssm {

namespace detail {

// plain triple loop for matrices too small to amortize a blocked gemm's
// setup (attention runs huge numbers of tiny per-head products)
template <typename T>
void gemm_small(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k, bool trans_a,
                bool trans_b, bool accumulate) {
  int64_t ars = trans_a ? 1 : k, acs = trans_a ? m : 1;
  int64_t brs = trans_b ? 1 : n, bcs = trans_b ? k : 1;
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      T s = accumulate ? c[i * n + j] : T(0);
      const T* ap = a + i * ars;
      const T* bp = b + j * bcs;
      for (int64_t l = 0; l < k; ++l) s += ap[l * acs] * bp[l * brs];
      c[i * n + j] = s;
    }
}

// C(m,n) = opA(A) * opB(B) [+ C if accumulate], all row-major.
template <typename T>
void gemm(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k, bool trans_a,
          bool trans_b, bool accumulate) {
  if (m * n * k <= 32768) return gemm_small(c, a, b, m, n, k, trans_a, trans_b, accumulate);
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using CMap = Eigen::Map<const Mat>;
  using MMap = Eigen::Map<Mat>;
  MMap C(c, m, n);
  CMap A(a, trans_a ? k : m, trans_a ? m : k);
  CMap B(b, trans_b ? n : k, trans_b ? k : n);
  if (!accumulate) {
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else C.noalias() = A.transpose() * B.transpose();
  } else {
    if (!trans_a && !trans_b) C.noalias() += A * B;
    else if (!trans_a && trans_b) C.noalias() += A * B.transpose();
    else if (trans_a && !trans_b) C.noalias() += A.transpose() * B;
    else C.noalias() += A.transpose() * B.transpose();
  }
}

// C[r,:] = bias + sum_j a[r,j] * B[j,:], accumulated in fixed j order. Every
// row's result is bit-identical regardless of row count or position, which the
// slot-permutation and no-leakage contracts rely on (blocked gemm kernels do
// not guarantee this at small widths). Rows are tiled in fours to share the
// B-row loads; tiling never reorders any single row's accumulation.
template <typename T>
void gemm_rowind(T* __restrict c, const T* __restrict a, const T* __restrict b, int64_t rows,
                 int64_t n, int64_t k, const T* __restrict bias) {
#pragma omp parallel for schedule(static) if (rows >= 256)
  for (int64_t r0 = 0; r0 < rows; r0 += 4) {
    int64_t rb = std::min<int64_t>(4, rows - r0);
    for (int64_t r = 0; r < rb; ++r) {
      T* cr = c + (r0 + r) * n;
      if (bias)
        std::copy(bias, bias + n, cr);
      else
        std::fill(cr, cr + n, T(0));
    }
    if (rb == 4) {
      T* __restrict c0 = c + r0 * n;
      T* __restrict c1 = c0 + n;
      T* __restrict c2 = c1 + n;
      T* __restrict c3 = c2 + n;
      const T* a0 = a + r0 * k;
      for (int64_t j = 0; j < k; ++j) {
        const T* __restrict br = b + j * n;
        T v0 = a0[j], v1 = a0[k + j], v2 = a0[2 * k + j], v3 = a0[3 * k + j];
        for (int64_t i = 0; i < n; ++i) {
          c0[i] += v0 * br[i];
          c1[i] += v1 * br[i];
          c2[i] += v2 * br[i];
          c3[i] += v3 * br[i];
        }
      }
    } else {
      for (int64_t r = 0; r < rb; ++r) {
        T* __restrict cr = c + (r0 + r) * n;
        const T* ar = a + (r0 + r) * k;
        for (int64_t j = 0; j < k; ++j) {
          T av = ar[j];
          const T* __restrict br = b + j * n;
          for (int64_t i = 0; i < n; ++i) cr[i] += av * br[i];
        }
      }
    }
  }
}

}  // namespace detail

// Batched matrix product. a: [..., m, k], b: [..., k, n] with equal batch
// dims, or b rank-2 shared across the batch. trans flags apply to the last
// two dims.
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  if (a.rank() < 2 || b.rank() < 2) fail("matmul: inputs must be at least rank 2");
  int64_t m = a.dim(trans_a ? -1 : -2);
  int64_t ka = a.dim(trans_a ? -2 : -1);
  int64_t kb = b.dim(trans_b ? -1 : -2);
  int64_t n = b.dim(trans_b ? -2 : -1);
  if (ka != kb)
    fail("matmul: inner dims disagree, ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  int64_t batch_a = 1, batch_b = 1;
  for (int i = 0; i < a.rank() - 2; ++i) batch_a *= a.dim(i);
  for (int i = 0; i < b.rank() - 2; ++i) batch_b *= b.dim(i);
  if (batch_b != batch_a && batch_b != 1)
    fail("matmul: batch dims disagree, ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  if (batch_b != 1 && batch_b == batch_a) {
    for (int i = 0; i < a.rank() - 2; ++i)
      if (b.rank() - 2 != a.rank() - 2 || b.dim(i) != a.dim(i))
        fail("matmul: batch dims disagree, ", shape_str(a.shape()), " x ", shape_str(b.shape()));
  }
  Shape os(a.shape().begin(), a.shape().end() - 2);
  os.push_back(m);
  os.push_back(n);
  Tensor<T> y(os);
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* py = y.ptr();
  int64_t as = m * ka, bs = (batch_b == 1) ? 0 : ka * n, ys = m * n;

  if (batch_b == 1 && !trans_a && batch_a > 1) {
    // shared right operand: fold the batch into one tall gemm
    detail::gemm(py, pa, pb, batch_a * m, n, ka, false, trans_b, false);
  } else if (batch_a == 1) {
    detail::gemm(py, pa, pb, m, n, ka, trans_a, trans_b, false);
  } else {
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < batch_a; ++i)
      detail::gemm(py + i * ys, pa + i * as, pb + i * bs, m, n, ka, trans_a, trans_b, false);
  }
  check_finite("matmul", y);

  if (tracing<T>({&a, &b})) {
    y.set_requires_grad(true);
    Tensor<T> ac = a, bc = b, yc = y;
    Tape<T>::current()->record([ac, bc, yc, m, n, ka, batch_a, batch_b, trans_a, trans_b]() mutable {
      if (!yc.has_grad()) return;
      const T* g = yc.grad().data();
      const T* pa = ac.ptr();
      const T* pb = bc.ptr();
      int64_t as = m * ka, bs = (batch_b == 1) ? 0 : ka * n, ys = m * n;
      if (ac.requires_grad()) {
        std::vector<T> da(static_cast<size_t>(ac.numel()), T(0));
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < batch_a; ++i) {
          // dA = dC * opB^T  (or its transpose when trans_a)
          if (!trans_a)
            detail::gemm(da.data() + i * as, g + i * ys, pb + i * bs, m, ka, n, false, !trans_b,
                         false);
          else
            detail::gemm(da.data() + i * as, pb + i * bs, g + i * ys, ka, m, n, trans_b, true,
                         false);
        }
        ac.accumulate_grad("matmul", da.data(), ac.numel());
      }
      if (bc.requires_grad()) {
        std::vector<T> db(static_cast<size_t>(bc.numel()), T(0));
        if (batch_b == 1) {
          // shared operand: accumulate over the batch sequentially (deterministic)
          for (int64_t i = 0; i < batch_a; ++i) {
            if (!trans_b)
              detail::gemm(db.data(), pa + i * as, g + i * ys, ka, n, m, !trans_a, false, true);
            else
              detail::gemm(db.data(), g + i * ys, pa + i * as, n, ka, m, true, trans_a, true);
          }
        } else {
#pragma omp parallel for schedule(static)
          for (int64_t i = 0; i < batch_a; ++i) {
            if (!trans_b)
              detail::gemm(db.data() + i * bs, pa + i * as, g + i * ys, ka, n, m, !trans_a, false,
                           false);
            else
              detail::gemm(db.data() + i * bs, g + i * ys, pa + i * as, n, ka, m, true, trans_a,
                           false);
          }
        }
        bc.accumulate_grad("matmul", db.data(), bc.numel());
      }
    });
  }
  return y;
}

// y[..., out] = x[..., in] . w[in, out] + b, batch dims folded into one gemm.
// row_independent selects the fixed-order kernel whose per-row results do not
// depend on row position; the per-slot SSM/GRU paths need it for their
// bit-exact permutation and no-leakage contracts.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b = {},
                 bool row_independent = false) {
  if (w.rank() != 2) fail("linear: weight must be rank 2, got ", shape_str(w.shape()));
  int64_t in = w.dim(0), out = w.dim(1);
  if (x.dim(-1) != in)
    fail("linear: input dim ", x.dim(-1), " does not match weight ", shape_str(w.shape()));
  if (b.defined() && b.numel() != out)
    fail("linear: bias length ", b.numel(), " does not match out dim ", out);
  int64_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = out;
  Tensor<T> y(os);
  if (row_independent) {
    detail::gemm_rowind(y.ptr(), x.ptr(), w.ptr(), rows, out, in, b.defined() ? b.ptr() : nullptr);
  } else {
    detail::gemm(y.ptr(), x.ptr(), w.ptr(), rows, out, in, false, false, false);
    if (b.defined()) {
      T* py = y.ptr();
      const T* pbias = b.ptr();
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < out; ++j) py[r * out + j] += pbias[j];
    }
  }
  check_finite("linear", y);
  if (tracing<T>({&x, &w, &b})) {
    y.set_requires_grad(true);
    Tensor<T> xc = x, wc = w, bc = b, yc = y;
    Tape<T>::current()->record([xc, wc, bc, yc, rows, in, out]() mutable {
      if (!yc.has_grad()) return;
      const T* g = yc.grad().data();
      if (xc.requires_grad()) {
        std::vector<T> dx(static_cast<size_t>(xc.numel()));
        detail::gemm(dx.data(), g, wc.ptr(), rows, in, out, false, true, false);
        xc.accumulate_grad("linear", dx.data(), xc.numel());
      }
      if (wc.requires_grad()) {
        std::vector<T> dw(static_cast<size_t>(wc.numel()));
        detail::gemm(dw.data(), xc.ptr(), g, in, out, rows, true, false, false);
        wc.accumulate_grad("linear", dw.data(), wc.numel());
      }
      if (bc.defined() && bc.requires_grad()) {
        std::vector<T> db(static_cast<size_t>(out), T(0));
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < out; ++j) db[static_cast<size_t>(j)] += g[r * out + j];
        bc.accumulate_grad("linear", db.data(), out);
      }
    });
  }
  return y;
}

}  // namespace slotssm
