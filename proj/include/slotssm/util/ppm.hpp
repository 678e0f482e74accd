#pragma once

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "slotssm/core/common.hpp"

namespace slotssm {

// binary PPM (P6)
inline void write_ppm(const std::string& path, const uint8_t* rgb, int64_t h, int64_t w) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail("ppm: cannot open '", path, "' for writing");
  std::fprintf(f, "P6\n%lld %lld\n255\n", static_cast<long long>(w), static_cast<long long>(h));
  std::fwrite(rgb, 1, static_cast<size_t>(h * w * 3), f);
  std::fclose(f);
}

inline std::vector<uint8_t> read_ppm(const std::string& path, int64_t& h, int64_t& w) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail("ppm: cannot open '", path, "'");
  char magic[3] = {0};
  long long ww = 0, hh = 0;
  int maxv = 0;
  if (std::fscanf(f, "%2s %lld %lld %d", magic, &ww, &hh, &maxv) != 4 ||
      std::strcmp(magic, "P6") != 0 || maxv != 255) {
    std::fclose(f);
    fail("ppm: '", path, "' is not a P6/255 file");
  }
  std::fgetc(f);  // single whitespace after header
  std::vector<uint8_t> rgb(static_cast<size_t>(ww * hh * 3));
  size_t got = std::fread(rgb.data(), 1, rgb.size(), f);
  std::fclose(f);
  if (got != rgb.size()) fail("ppm: truncated pixel data in '", path, "'");
  h = hh;
  w = ww;
  return rgb;
}

}  // namespace slotssm
