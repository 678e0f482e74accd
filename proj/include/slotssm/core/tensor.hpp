#pragma once

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

#include "slotssm/core/common.hpp"

namespace slotssm {

// integer-domain finiteness scan: exponent-all-ones detects inf/NaN, and the
// OR-reduction vectorizes (a float reduction would serialize)
template <typename T>
bool all_finite(const T* p, int64_t n) {
  using U = std::conditional_t<sizeof(T) == 4, uint32_t, uint64_t>;
  constexpr U expmask = sizeof(T) == 4 ? U(0x7F800000u) : U(0x7FF0000000000000ull);
  U bad = 0;
  for (int64_t i = 0; i < n; ++i) {
    U u = std::bit_cast<U>(p[i]);
    bad |= static_cast<U>((u & expmask) == expmask);
  }
  return bad == 0;
}

// Global allocation counter (elements), used by the constant-per-step-cost
// property tests.
inline std::atomic<int64_t>& alloc_counter() {
  static std::atomic<int64_t> c{0};
  return c;
}

template <typename T>
struct Storage {
  AlignedVec<T> value;
  AlignedVec<T> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Dense row-major n-d array with value semantics on the handle and shared,
// immutable-by-convention storage. Gradients accumulate into the storage so
// every handle to the same leaf sees them.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (int64_t d : shape_)
      if (d <= 0) fail("Tensor: non-positive extent in shape ", shape_str(shape_));
    st_ = std::make_shared<Storage<T>>();
    st_->value.assign(static_cast<size_t>(shape_numel(shape_)), fill);
    alloc_counter() += shape_numel(shape_);
  }

  Tensor(Shape shape, const std::vector<T>& data) : shape_(std::move(shape)) {
    if (shape_numel(shape_) != static_cast<int64_t>(data.size()))
      fail("Tensor: shape ", shape_str(shape_), " does not match data length ", data.size());
    st_ = std::make_shared<Storage<T>>();
    st_->value.assign(data.begin(), data.end());
    alloc_counter() += shape_numel(shape_);
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  bool defined() const { return static_cast<bool>(st_); }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return defined() ? static_cast<int64_t>(st_->value.size()) : 0; }

  int64_t dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) fail("Tensor: dim ", i, " out of range for ", shape_str(shape_));
    return shape_[static_cast<size_t>(i)];
  }

  std::span<const T> data() const { return {st_->value.data(), st_->value.size()}; }
  std::span<T> mutable_data() { return {st_->value.data(), st_->value.size()}; }
  const T* ptr() const { return st_->value.data(); }
  T* ptr() { return st_->value.data(); }

  T item() const {
    if (numel() != 1) fail("Tensor: item() on non-scalar ", shape_str(shape_));
    return st_->value[0];
  }

  T at(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      fail("Tensor: at() rank mismatch for ", shape_str(shape_));
    int64_t off = 0;
    int i = 0;
    for (int64_t v : idx) {
      off = off * shape_[static_cast<size_t>(i)] + v;
      ++i;
    }
    return st_->value[static_cast<size_t>(off)];
  }

  bool requires_grad() const { return defined() && st_->requires_grad; }
  Tensor& set_requires_grad(bool v = true) {
    st_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return defined() && !st_->grad.empty(); }

  std::span<const T> grad() const {
    if (!has_grad()) fail("Tensor: grad accessed before backward populated it");
    return {st_->grad.data(), st_->grad.size()};
  }

  AlignedVec<T>& grad_buf() {
    if (st_->grad.empty()) st_->grad.assign(st_->value.size(), T(0));
    return st_->grad;
  }

  void zero_grad() {
    if (defined() && !st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), T(0));
  }

  // += contribution, rejecting non-finite values with op provenance
  void accumulate_grad(const char* op, const T* src, int64_t n) {
    auto& g = grad_buf();
    if (n != static_cast<int64_t>(g.size()))
      fail(op, ": gradient length ", n, " does not match tensor ", shape_str(shape_));
    if (!all_finite(src, n)) fail(op, ": non-finite gradient produced in backward");
    for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(i)] += src[i];
  }

  // Same storage under a different shape (element count preserved); gradients
  // alias, so reshape needs no tape node.
  Tensor with_shape(Shape shape) const {
    if (shape_numel(shape) != numel())
      fail("with_shape: ", shape_str(shape_), " to ", shape_str(shape), " changes element count");
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  // Same value storage, detached from autodiff.
  Tensor detach() const {
    Tensor t;
    t.shape_ = shape_;
    t.st_ = std::make_shared<Storage<T>>();
    t.st_->value = st_->value;
    return t;
  }

  bool same_storage(const Tensor& o) const { return st_ == o.st_; }

 private:
  Shape shape_;
  std::shared_ptr<Storage<T>> st_;
};

template <typename T>
void check_finite(const char* op, const Tensor<T>& t) {
  if (!all_finite(t.ptr(), t.numel()))
    fail(op, ": non-finite value in output ", shape_str(t.shape()));
}

}  // namespace slotssm
