// Copyright (c) 2026 cadnet authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor container: magic "CADW", u32 version, u64 tensor count, then
// per tensor: u32 name length, UTF-8 name, u8 dtype tag (0 = f32), u32 rank,
// u64 little-endian extents, row-major little-endian f32 payload. The format
// is self-describing; a reader needs no config to enumerate tensors.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cad/params.hpp"
#include "cad/tensor.hpp"

namespace cad {

using TensorMap = std::map<std::string, TensorF>;

std::vector<std::uint8_t> encode_checkpoint(const TensorMap& tensors);
TensorMap decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::string& path);

/// Snapshot a ParamSet's values into a plain tensor map.
TensorMap snapshot_params(const ParamSet<float>& params);

/// Overwrite param values from a map; every param must be present with a
/// matching shape.
void restore_params(ParamSet<float>& params, const TensorMap& tensors);

/// FNV-1a over a byte stream, used for config and dataset content hashes.
std::uint64_t hash_bytes(const std::uint8_t* data, std::size_t n,
                         std::uint64_t seed = 0xCBF29CE484222325ULL);
std::uint64_t hash_file(const std::string& path);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path,
                      const std::vector<std::uint8_t>& bytes);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace cad
