#pragma once

#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <string>

#include "slotssm/core/crc32.hpp"
#include "slotssm/data/physics.hpp"

// Dataset file layout (all integers little-endian):
//   magic "SSDS" | u32 version | u32 header_len | header (key=value lines)
//   per episode: u32 payload_len | payload | u32 crc32(payload)
// payload = frames u8 [T,H,W,3] ++ masks u8 [T,H,W] ++ color log (u16 ball,
// u16 color)*; the log length is implied by payload_len. T/H/W come from the
// header and are shared by every episode in the file.

namespace slotssm {

constexpr uint32_t kDatasetVersion = 1;

struct DatasetHeader {
  std::map<std::string, std::string> kv;

  std::string get(const std::string& key) const {
    auto it = kv.find(key);
    if (it == kv.end()) fail("dataset: header key '", key, "' missing");
    return it->second;
  }
  int64_t get_int(const std::string& key) const { return std::stoll(get(key)); }

  std::string serialize() const {
    std::string s;
    for (const auto& [k, v] : kv) s += k + "=" + v + "\n";
    return s;
  }
  static DatasetHeader parse(const std::string& text) {
    DatasetHeader h;
    size_t pos = 0;
    while (pos < text.size()) {
      size_t eol = text.find('\n', pos);
      if (eol == std::string::npos) eol = text.size();
      std::string line = text.substr(pos, eol - pos);
      pos = eol + 1;
      if (line.empty()) continue;
      size_t eq = line.find('=');
      if (eq == std::string::npos) fail("dataset: malformed header line '", line, "'");
      h.kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return h;
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline uint32_t read_u32(std::FILE* f, const char* what) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) fail("dataset: truncated file reading ", what);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void write_u32(std::FILE* f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  if (std::fwrite(b, 1, 4, f) != 4) fail("dataset: write failed");
}

}  // namespace detail

class DatasetWriter {
 public:
  DatasetWriter(const std::string& path, DatasetHeader header) : f_(std::fopen(path.c_str(), "wb")) {
    if (!f_) fail("dataset: cannot open '", path, "' for writing");
    std::string htext = header.serialize();
    if (std::fwrite("SSDS", 1, 4, f_.get()) != 4) fail("dataset: write failed");
    detail::write_u32(f_.get(), kDatasetVersion);
    detail::write_u32(f_.get(), static_cast<uint32_t>(htext.size()));
    if (!htext.empty() && std::fwrite(htext.data(), 1, htext.size(), f_.get()) != htext.size())
      fail("dataset: write failed");
  }

  void append(const Episode& ep) {
    std::string payload;
    payload.reserve(ep.frames.size() + ep.masks.size() + ep.color_log.size() * 4);
    payload.append(reinterpret_cast<const char*>(ep.frames.data()), ep.frames.size());
    payload.append(reinterpret_cast<const char*>(ep.masks.data()), ep.masks.size());
    for (auto [ball, color] : ep.color_log) {
      payload.push_back(static_cast<char>(ball & 0xFF));
      payload.push_back(static_cast<char>(ball >> 8));
      payload.push_back(static_cast<char>(color & 0xFF));
      payload.push_back(static_cast<char>(color >> 8));
    }
    detail::write_u32(f_.get(), static_cast<uint32_t>(payload.size()));
    if (std::fwrite(payload.data(), 1, payload.size(), f_.get()) != payload.size())
      fail("dataset: write failed");
    detail::write_u32(f_.get(), crc32(payload.data(), payload.size()));
  }

 private:
  detail::FilePtr f_;
};

struct Dataset {
  DatasetHeader header;
  std::vector<Episode> episodes;
};

inline Dataset load_dataset(const std::string& path) {
  detail::FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) fail("dataset: cannot open '", path, "'");
  char magic[4];
  if (std::fread(magic, 1, 4, f.get()) != 4 || std::memcmp(magic, "SSDS", 4) != 0)
    fail("dataset: bad magic in '", path, "'");
  uint32_t version = detail::read_u32(f.get(), "version");
  if (version != kDatasetVersion)
    fail("dataset: unsupported version ", version, " (this reader handles ", kDatasetVersion, ")");
  uint32_t hlen = detail::read_u32(f.get(), "header length");
  std::string htext(hlen, '\0');
  if (hlen && std::fread(htext.data(), 1, hlen, f.get()) != hlen)
    fail("dataset: truncated header");
  Dataset ds;
  ds.header = DatasetHeader::parse(htext);
  int64_t t = ds.header.get_int("T"), h = ds.header.get_int("H"), w = ds.header.get_int("W");
  size_t frames_len = static_cast<size_t>(t * h * w * 3);
  size_t masks_len = static_cast<size_t>(t * h * w);
  while (true) {
    unsigned char b[4];
    size_t got = std::fread(b, 1, 4, f.get());
    if (got == 0) break;  // clean EOF
    if (got != 4) fail("dataset: truncated record length");
    uint32_t plen = static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
                    (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
    std::string payload(plen, '\0');
    if (plen && std::fread(payload.data(), 1, plen, f.get()) != plen)
      fail("dataset: truncated payload");
    uint32_t want_crc = detail::read_u32(f.get(), "record crc");
    if (crc32(payload.data(), payload.size()) != want_crc)
      fail("dataset: checksum failure in '", path, "'");
    if (plen < frames_len + masks_len || (plen - frames_len - masks_len) % 4)
      fail("dataset: record size ", plen, " inconsistent with header shape");
    Episode ep;
    ep.t = t;
    ep.h = h;
    ep.w = w;
    ep.frames.assign(payload.begin(), payload.begin() + static_cast<int64_t>(frames_len));
    ep.masks.assign(payload.begin() + static_cast<int64_t>(frames_len),
                    payload.begin() + static_cast<int64_t>(frames_len + masks_len));
    size_t nlog = (plen - frames_len - masks_len) / 4;
    const auto* lp = reinterpret_cast<const unsigned char*>(payload.data()) + frames_len + masks_len;
    for (size_t i = 0; i < nlog; ++i) {
      uint16_t ball = static_cast<uint16_t>(lp[i * 4] | (lp[i * 4 + 1] << 8));
      uint16_t color = static_cast<uint16_t>(lp[i * 4 + 2] | (lp[i * 4 + 3] << 8));
      ep.color_log.emplace_back(ball, color);
    }
    ds.episodes.push_back(std::move(ep));
  }
  return ds;
}

}  // namespace slotssm
