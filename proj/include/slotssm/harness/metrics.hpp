#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "slotssm/core/common.hpp"

namespace slotssm {

// Adjusted Rand index between two labelings restricted to foreground pixels
// (gt label bg excludes a pixel). Computed from the contingency table. A frame
// with no foreground scores 1 by convention.
inline double fg_ari_frame(const int32_t* pred, const int32_t* gt, int64_t n_px,
                           int32_t gt_background = 0) {
  std::vector<std::pair<int32_t, int32_t>> pairs;
  pairs.reserve(static_cast<size_t>(n_px));
  for (int64_t i = 0; i < n_px; ++i)
    if (gt[i] != gt_background) pairs.emplace_back(pred[i], gt[i]);
  int64_t n = static_cast<int64_t>(pairs.size());
  if (n == 0) return 1.0;

  // dense relabeling
  std::vector<int32_t> plab, glab;
  for (auto [p, g] : pairs) {
    plab.push_back(p);
    glab.push_back(g);
  }
  auto dense = [](std::vector<int32_t>& v) {
    std::vector<int32_t> uniq = v;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto& x : v)
      x = static_cast<int32_t>(std::lower_bound(uniq.begin(), uniq.end(), x) - uniq.begin());
    return static_cast<int64_t>(uniq.size());
  };
  int64_t np = dense(plab), ng = dense(glab);
  std::vector<int64_t> table(static_cast<size_t>(np * ng), 0);
  for (int64_t i = 0; i < n; ++i) table[static_cast<size_t>(plab[static_cast<size_t>(i)] * ng + glab[static_cast<size_t>(i)])]++;

  auto c2 = [](int64_t x) { return x * (x - 1) / 2; };
  int64_t sum_ij = 0, sum_a = 0, sum_b = 0;
  for (int64_t v : table) sum_ij += c2(v);
  for (int64_t i = 0; i < np; ++i) {
    int64_t a = 0;
    for (int64_t j = 0; j < ng; ++j) a += table[static_cast<size_t>(i * ng + j)];
    sum_a += c2(a);
  }
  for (int64_t j = 0; j < ng; ++j) {
    int64_t b = 0;
    for (int64_t i = 0; i < np; ++i) b += table[static_cast<size_t>(i * ng + j)];
    sum_b += c2(b);
  }
  double total = static_cast<double>(c2(n));
  double expected = static_cast<double>(sum_a) * static_cast<double>(sum_b) / total;
  double maxidx = 0.5 * static_cast<double>(sum_a + sum_b);
  double denom = maxidx - expected;
  if (denom == 0.0) return 1.0;
  return (static_cast<double>(sum_ij) - expected) / denom;
}

// mean over frames; pred/gt: [T, H*W] label maps
inline double fg_ari(const std::vector<std::vector<int32_t>>& pred,
                     const std::vector<std::vector<int32_t>>& gt, int32_t gt_background = 0) {
  if (pred.size() != gt.size() || pred.empty()) fail("fg_ari: mask counts differ or empty");
  double acc = 0;
  for (size_t t = 0; t < pred.size(); ++t) {
    if (pred[t].size() != gt[t].size()) fail("fg_ari: mask sizes differ at frame ", t);
    acc += fg_ari_frame(pred[t].data(), gt[t].data(), static_cast<int64_t>(pred[t].size()),
                        gt_background);
  }
  return acc / static_cast<double>(pred.size());
}

// Mean IoU under the best injective matching of ground-truth objects to
// predicted slots, found exhaustively (desk-scale K <= 8). Unmatched objects
// contribute 0; background is not an object. Mean over gt objects, then over
// frames.
inline double miou_frame(const int32_t* pred, const int32_t* gt, int64_t n_px, int64_t k_pred,
                         int32_t gt_background = 0) {
  std::vector<int32_t> gt_labels;
  for (int64_t i = 0; i < n_px; ++i)
    if (gt[i] != gt_background) gt_labels.push_back(gt[i]);
  std::sort(gt_labels.begin(), gt_labels.end());
  gt_labels.erase(std::unique(gt_labels.begin(), gt_labels.end()), gt_labels.end());
  int64_t n_gt = static_cast<int64_t>(gt_labels.size());
  if (n_gt == 0) return 1.0;
  if (n_gt > 8 || k_pred > 8) fail("miou: exhaustive matching supports at most 8 labels");

  // IoU matrix
  std::vector<double> iou(static_cast<size_t>(n_gt * k_pred), 0.0);
  for (int64_t gi = 0; gi < n_gt; ++gi)
    for (int64_t pi = 0; pi < k_pred; ++pi) {
      int64_t inter = 0, uni = 0;
      for (int64_t i = 0; i < n_px; ++i) {
        bool in_g = gt[i] == gt_labels[static_cast<size_t>(gi)];
        bool in_p = pred[i] == pi;
        inter += in_g && in_p;
        uni += in_g || in_p;
      }
      iou[static_cast<size_t>(gi * k_pred + pi)] =
          uni ? static_cast<double>(inter) / static_cast<double>(uni) : 0.0;
    }

  // exhaustive injective assignment gt -> slots, maximizing the IoU sum;
  // summation in gt order keeps results comparable bit-for-bit with the
  // brute-force permutation oracle
  double best = 0.0;
  std::vector<bool> used(static_cast<size_t>(k_pred), false);
  auto rec = [&](auto&& self, int64_t gi, double acc) -> void {
    if (gi == n_gt) {
      best = std::max(best, acc);
      return;
    }
    self(self, gi + 1, acc);  // leave this object unmatched
    for (int64_t pi = 0; pi < k_pred; ++pi) {
      if (used[static_cast<size_t>(pi)]) continue;
      used[static_cast<size_t>(pi)] = true;
      self(self, gi + 1, acc + iou[static_cast<size_t>(gi * k_pred + pi)]);
      used[static_cast<size_t>(pi)] = false;
    }
  };
  rec(rec, 0, 0.0);
  return best / static_cast<double>(n_gt);
}

inline double miou(const std::vector<std::vector<int32_t>>& pred,
                   const std::vector<std::vector<int32_t>>& gt, int64_t k_pred,
                   int32_t gt_background = 0) {
  if (pred.size() != gt.size() || pred.empty()) fail("miou: mask counts differ or empty");
  double acc = 0;
  for (size_t t = 0; t < pred.size(); ++t)
    acc += miou_frame(pred[t].data(), gt[t].data(), static_cast<int64_t>(pred[t].size()), k_pred,
                      gt_background);
  return acc / static_cast<double>(pred.size());
}

}  // namespace slotssm
