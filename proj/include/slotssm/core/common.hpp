#pragma once

#include <cstdint>
#include <new>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace slotssm {

using Shape = std::vector<int64_t>;

// 64-byte-aligned storage for everything SIMD kernels touch. Keeping every
// buffer at the same alignment pins vectorization peel counts to zero, so
// results cannot vary with heap layout across runs.
template <typename T, size_t Align = 64>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  T* allocate(size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t n) {
    ::operator delete(p, n * sizeof(T), std::align_val_t(Align));
  }
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

template <typename T>
using AlignedVec = std::vector<T, AlignedAlloc<T>>;

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

template <typename... Parts>
std::string str(Parts&&... parts) {
  std::ostringstream oss;
  (oss << ... << std::forward<Parts>(parts));
  return oss.str();
}

}  // namespace detail

template <typename... Parts>
[[noreturn]] void fail(Parts&&... parts) {
  throw Error(detail::str(std::forward<Parts>(parts)...));
}

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream oss;
  oss << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) oss << ',';
    oss << s[i];
  }
  oss << ']';
  return oss.str();
}

// Integer index tensor companion for embedding/CE targets.
struct IntArray {
  Shape shape;
  std::vector<int32_t> data;

  IntArray() = default;
  IntArray(Shape s, std::vector<int32_t> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
      fail("IntArray: shape ", shape_str(shape), " does not match data length ", data.size());
  }
  int64_t numel() const { return static_cast<int64_t>(data.size()); }
};

}  // namespace slotssm
