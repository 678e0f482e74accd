#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "slotssm/core/tensor.hpp"

namespace slotssm {

// Reverse-mode tape. Ops append themselves in execution order while a Tape is
// alive on this thread; backward() replays the records in reverse. Appending
// guarantees inputs precede outputs, so no explicit topological sort is
// needed. One backward pass per recorded tape.
template <typename T>
class Tape {
 public:
  Tape() : prev_(current_) { current_ = this; }
  ~Tape() { current_ = prev_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current() { return current_; }

  void record(std::function<void()> backward) { nodes_.push_back(std::move(backward)); }

  size_t size() const { return nodes_.size(); }

  void backward(Tensor<T>& loss) {
    if (loss.numel() != 1) fail("backward: loss must be scalar, got ", shape_str(loss.shape()));
    if (consumed_) fail("backward: tape already consumed; re-record the forward pass");
    consumed_ = true;
    loss.grad_buf()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
  static inline thread_local Tape* current_ = nullptr;
};

// True when the op should record itself: a tape is active and some input
// carries gradient.
template <typename T>
bool tracing(std::initializer_list<const Tensor<T>*> inputs) {
  if (!Tape<T>::current()) return false;
  for (const auto* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

}  // namespace slotssm
