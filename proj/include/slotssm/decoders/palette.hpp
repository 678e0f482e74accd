#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "slotssm/core/common.hpp"

namespace slotssm {

// The 7 discrete color categories: background, white, and the 5 non-white
// ball colors. Class index = position in `colors`.
struct ColorPalette {
  std::array<std::array<uint8_t, 3>, 7> colors;

  static constexpr int kBackground = 0;
  static constexpr int kWhite = 1;
  static constexpr int kFirstBallColor = 2;  // ball color id c -> class c + 2
  static constexpr int kClasses = 7;

  static ColorPalette standard() {
    return ColorPalette{{{{{0, 0, 0}},        // background
                          {{255, 255, 255}},  // white
                          {{255, 0, 0}},      // red
                          {{0, 255, 0}},      // green
                          {{0, 0, 255}},      // blue
                          {{255, 255, 0}},    // yellow
                          {{255, 0, 255}}}}};  // magenta
  }

  // nearest palette class by squared RGB distance; ties break to the lowest
  // class index (exact match on generated data)
  int nearest(uint8_t r, uint8_t g, uint8_t b) const {
    int best = 0;
    int64_t best_d = -1;
    for (int c = 0; c < kClasses; ++c) {
      int64_t dr = static_cast<int64_t>(r) - colors[static_cast<size_t>(c)][0];
      int64_t dg = static_cast<int64_t>(g) - colors[static_cast<size_t>(c)][1];
      int64_t db = static_cast<int64_t>(b) - colors[static_cast<size_t>(c)][2];
      int64_t dist = dr * dr + dg * dg + db * db;
      if (best_d < 0 || dist < best_d) {
        best_d = dist;
        best = c;
      }
    }
    return best;
  }
};

// u8 RGB image -> class map in {0..6}
inline std::vector<int32_t> quantize_colors(const uint8_t* rgb, int64_t h, int64_t w,
                                            const ColorPalette& pal) {
  std::vector<int32_t> out(static_cast<size_t>(h * w));
  for (int64_t i = 0; i < h * w; ++i)
    out[static_cast<size_t>(i)] =
        pal.nearest(rgb[i * 3], rgb[i * 3 + 1], rgb[i * 3 + 2]);
  return out;
}

// class map -> u8 RGB (inverse of quantize on palette colors)
inline std::vector<uint8_t> render_classes(const int32_t* classes, int64_t h, int64_t w,
                                           const ColorPalette& pal) {
  std::vector<uint8_t> out(static_cast<size_t>(h * w * 3));
  for (int64_t i = 0; i < h * w; ++i) {
    int32_t c = classes[i];
    if (c < 0 || c >= ColorPalette::kClasses) fail("render_classes: class ", c, " out of range");
    for (int j = 0; j < 3; ++j)
      out[static_cast<size_t>(i * 3 + j)] = pal.colors[static_cast<size_t>(c)][static_cast<size_t>(j)];
  }
  return out;
}

}  // namespace slotssm
