// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0

#include "cad/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cad {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'D', 'W'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((v >> (8 * i)) & 0xFF);
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

struct Cursor {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    check(pos + n <= bytes.size(), "checkpoint: truncated at byte " +
                                       std::to_string(pos));
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors) {
  std::vector<std::uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u64(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    out.push_back(kDtypeF32);
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (Index d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
    for (float v : t.values()) put_f32(out, v);
  }
  return out;
}

TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Cursor c{bytes};
  check(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0,
        "checkpoint: bad magic (expected CADW)");
  c.pos = 4;
  const std::uint32_t version = c.u32();
  check(version == kVersion, "checkpoint: unsupported version " +
                                 std::to_string(version));
  const std::uint64_t count = c.u64();
  TensorMap out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = c.u32();
    const std::string name = c.str(name_len);
    const std::uint8_t dtype = c.u8();
    check(dtype == kDtypeF32, "checkpoint: unknown dtype tag " +
                                  std::to_string(dtype) + " for '" + name + "'");
    const std::uint32_t rank = c.u32();
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r)
      shape.push_back(static_cast<Index>(c.u64()));
    const Index n = numel(shape);
    std::vector<float> data(static_cast<std::size_t>(n));
    for (Index j = 0; j < n; ++j) data[static_cast<std::size_t>(j)] = c.f32();
    check(out.emplace(name, TensorF::from(std::move(shape), std::move(data)))
              .second,
          "checkpoint: duplicate tensor '" + name + "'");
  }
  check(c.pos == bytes.size(), "checkpoint: trailing bytes after tensor " +
                                   std::to_string(count));
  return out;
}

void save_checkpoint(const std::string& path, const TensorMap& tensors) {
  write_file_bytes(path, encode_checkpoint(tensors));
}

TensorMap load_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file_bytes(path));
}

TensorMap snapshot_params(const ParamSet<float>& params) {
  TensorMap out;
  for (const auto& [name, t] : params) out.emplace(name, t.clone());
  return out;
}

void restore_params(ParamSet<float>& params, const TensorMap& tensors) {
  for (auto& [name, p] : params) {
    auto it = tensors.find(name);
    if (it == tensors.end()) fail("restore: checkpoint is missing '" + name + "'");
    check(it->second.shape() == p.shape(),
          "restore: shape mismatch for '" + name + "': checkpoint " +
              shape_str(it->second.shape()) + " vs model " +
              shape_str(p.shape()));
    p.values_mut() = it->second.values();
  }
}

std::uint64_t hash_bytes(const std::uint8_t* data, std::size_t n,
                         std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 0x100000001B3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::string& path) {
  const auto bytes = read_file_bytes(path);
  return hash_bytes(bytes.data(), bytes.size());
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "cannot open file '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot write file '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  check(out.good(), "failed writing file '" + path + "'");
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "cannot write file '" + path + "'");
  out << text;
  check(out.good(), "failed writing file '" + path + "'");
}

}  // namespace cad
