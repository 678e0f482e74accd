#pragma once

#include <functional>

#include "slotssm/core/matmul.hpp"
#include "slotssm/core/tape.hpp"

namespace slotssm {

// Central finite-difference verification of reverse-mode gradients.
// f must be a deterministic scalar function of the given parameters; it is
// evaluated in 64-bit. Returns
//   max over coordinates of |analytic - central| / max(1, |central|).
inline double finite_diff_gradcheck(const std::function<Tensor<double>()>& f,
                                    std::vector<Tensor<double>> params, double eps = 1e-5) {
  for (auto& p : params) p.set_requires_grad(true);

  double base;
  {
    Tape<double> tape;
    Tensor<double> loss = f();
    base = loss.item();
    tape.backward(loss);
  }
  // determinism check: repeated plain evaluations must agree bit-exactly
  double check1 = f().item();
  double check2 = f().item();
  if (check1 != check2 || check1 != base)
    fail("gradcheck: function is not deterministic across identical calls");

  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (!p.has_grad())
      analytic.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    else
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    p.zero_grad();
  }

  double max_rel = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    auto vals = p.mutable_data();
    for (int64_t i = 0; i < p.numel(); ++i) {
      double orig = vals[i];
      vals[i] = orig + eps;
      double fp = f().item();
      vals[i] = orig - eps;
      double fm = f().item();
      vals[i] = orig;
      double fd = (fp - fm) / (2.0 * eps);
      double rel = std::abs(analytic[pi][static_cast<size_t>(i)] - fd) / std::max(1.0, std::abs(fd));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace slotssm
