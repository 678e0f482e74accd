#pragma once

#include <cstdint>
#include <vector>

#include "slotssm/core/common.hpp"

namespace slotssm {

// One patch of a patchified frame sequence, with its source coordinates for
// positional/temporal embeddings.
struct PatchToken {
  int64_t frame = 0, row = 0, col = 0;
  std::vector<uint8_t> pixels;  // [p_px, p_px, 3]
};

// Splits frames [T, H, W, 3] into a non-overlapping P x P grid per frame and
// flattens row-major, frames in temporal order: length T * P^2.
inline std::vector<PatchToken> patchify(const uint8_t* frames, int64_t t, int64_t h, int64_t w,
                                        int64_t p) {
  if (h % p || w % p) fail("patchify: image size ", h, "x", w, " not divisible by grid ", p);
  int64_t ph = h / p, pw = w / p;
  std::vector<PatchToken> out;
  out.reserve(static_cast<size_t>(t * p * p));
  for (int64_t ti = 0; ti < t; ++ti)
    for (int64_t r = 0; r < p; ++r)
      for (int64_t c = 0; c < p; ++c) {
        PatchToken tok;
        tok.frame = ti;
        tok.row = r;
        tok.col = c;
        tok.pixels.resize(static_cast<size_t>(ph * pw * 3));
        for (int64_t y = 0; y < ph; ++y)
          for (int64_t x = 0; x < pw; ++x)
            for (int64_t ch = 0; ch < 3; ++ch)
              tok.pixels[static_cast<size_t>((y * pw + x) * 3 + ch)] =
                  frames[((ti * h + r * ph + y) * w + c * pw + x) * 3 + ch];
        out.push_back(std::move(tok));
      }
  return out;
}

// Exact inverse of patchify.
inline std::vector<uint8_t> unpatchify(const std::vector<PatchToken>& tokens, int64_t t, int64_t h,
                                       int64_t w, int64_t p) {
  int64_t ph = h / p, pw = w / p;
  if (static_cast<int64_t>(tokens.size()) != t * p * p)
    fail("unpatchify: got ", tokens.size(), " tokens, expected ", t * p * p);
  std::vector<uint8_t> frames(static_cast<size_t>(t * h * w * 3));
  for (const auto& tok : tokens)
    for (int64_t y = 0; y < ph; ++y)
      for (int64_t x = 0; x < pw; ++x)
        for (int64_t ch = 0; ch < 3; ++ch)
          frames[static_cast<size_t>(
              ((tok.frame * h + tok.row * ph + y) * w + tok.col * pw + x) * 3 + ch)] =
              tok.pixels[static_cast<size_t>((y * pw + x) * 3 + ch)];
  return frames;
}

}  // namespace slotssm
