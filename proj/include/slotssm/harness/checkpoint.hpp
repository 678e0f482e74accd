#pragma once

#include <cstdio>
#include <cstring>
#include <map>
#include <string>
#include <vector>

#include "slotssm/core/crc32.hpp"
#include "slotssm/core/tensor.hpp"

// Checkpoint layout (little-endian):
//   magic "SSCK" | u32 version | u32 config_len | config UTF-8 |
//   per tensor: u16 name_len | name | u8 rank | u32 dims... | f32 payload |
//   trailing u32 CRC-32 of everything before it.
// Tensor data is always f32 on disk; f64 models are cast on save/load.

namespace slotssm {

constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  Shape shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::string config_text;
  std::vector<std::pair<std::string, CheckpointTensor>> tensors;

  const CheckpointTensor* find(const std::string& name) const {
    for (auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string buf;
  buf.append("SSCK", 4);
  auto put_u32 = [&](uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto put_u16 = [&](uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>(v >> 8));
  };
  put_u32(kCheckpointVersion);
  put_u32(static_cast<uint32_t>(ck.config_text.size()));
  buf += ck.config_text;
  for (const auto& [name, t] : ck.tensors) {
    if (name.size() > 0xFFFF) fail("checkpoint: tensor name too long");
    put_u16(static_cast<uint16_t>(name.size()));
    buf += name;
    if (t.shape.size() > 0xFF) fail("checkpoint: rank too large");
    buf.push_back(static_cast<char>(t.shape.size()));
    for (int64_t d : t.shape) put_u32(static_cast<uint32_t>(d));
    size_t off = buf.size();
    buf.resize(off + t.data.size() * 4);
    std::memcpy(buf.data() + off, t.data.data(), t.data.size() * 4);
  }
  put_u32(crc32(buf.data(), buf.size()));
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) fail("checkpoint: cannot open '", path, "' for writing");
  size_t wrote = std::fwrite(buf.data(), 1, buf.size(), f);
  std::fclose(f);
  if (wrote != buf.size()) fail("checkpoint: short write to '", path, "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) fail("checkpoint: cannot open '", path, "'");
  std::string buf;
  {
    std::fseek(f, 0, SEEK_END);
    long len = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    buf.resize(static_cast<size_t>(len));
    size_t got = std::fread(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (got != buf.size()) fail("checkpoint: short read from '", path, "'");
  }
  if (buf.size() < 16 || std::memcmp(buf.data(), "SSCK", 4) != 0)
    fail("checkpoint: bad magic in '", path, "'");
  uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  if (crc32(buf.data(), buf.size() - 4) != stored_crc)
    fail("checkpoint: CRC mismatch in '", path, "'");

  size_t pos = 4;
  auto get_u32 = [&]() {
    if (pos + 4 > buf.size()) fail("checkpoint: truncated");
    uint32_t v;
    std::memcpy(&v, buf.data() + pos, 4);
    pos += 4;
    return v;
  };
  auto get_u16 = [&]() {
    if (pos + 2 > buf.size()) fail("checkpoint: truncated");
    uint16_t v;
    std::memcpy(&v, buf.data() + pos, 2);
    pos += 2;
    return v;
  };
  uint32_t version = get_u32();
  if (version != kCheckpointVersion)
    fail("checkpoint: unsupported version ", version);
  uint32_t clen = get_u32();
  if (pos + clen > buf.size()) fail("checkpoint: truncated config");
  Checkpoint ck;
  ck.config_text = buf.substr(pos, clen);
  pos += clen;
  size_t end = buf.size() - 4;
  while (pos < end) {
    uint16_t nlen = get_u16();
    if (pos + nlen > end) fail("checkpoint: truncated name");
    std::string name = buf.substr(pos, nlen);
    pos += nlen;
    if (pos >= end) fail("checkpoint: truncated rank");
    uint8_t rank = static_cast<uint8_t>(buf[pos++]);
    CheckpointTensor t;
    int64_t numel = 1;
    for (int i = 0; i < rank; ++i) {
      int64_t d = get_u32();
      t.shape.push_back(d);
      numel *= d;
    }
    if (pos + static_cast<size_t>(numel) * 4 > end) fail("checkpoint: truncated payload");
    t.data.resize(static_cast<size_t>(numel));
    std::memcpy(t.data.data(), buf.data() + pos, static_cast<size_t>(numel) * 4);
    pos += static_cast<size_t>(numel) * 4;
    ck.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ck;
}

// shape-validated copy into a live tensor
template <typename T>
void restore_tensor(Tensor<T>& dst, const std::string& name, const Checkpoint& ck) {
  const CheckpointTensor* src = ck.find(name);
  if (!src) fail("checkpoint: tensor '", name, "' missing");
  if (src->shape != dst.shape())
    fail("checkpoint: tensor '", name, "' has shape ", shape_str(src->shape),
         ", model expects ", shape_str(dst.shape()));
  auto out = dst.mutable_data();
  for (int64_t i = 0; i < dst.numel(); ++i) out[i] = static_cast<T>(src->data[static_cast<size_t>(i)]);
}

}  // namespace slotssm
