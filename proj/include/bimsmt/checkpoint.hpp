// Copyright 2026 The bimsmt Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

#include "bimsmt/tensor.hpp"

namespace bimsmt {

inline constexpr char kCheckpointMagic[8] = {'B', 'I', 'M', 'S', 'M', 'T', '1', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// On-disk layout (all integers little-endian):
///   magic "BIMSMT1\0" | u32 version | u64 metadata length | metadata (UTF-8 JSON)
///   | u64 tensor count | tensors sorted by name, each:
///     u32 name length | name | u32 rank | u64 dims[rank] | f64 payload
struct Checkpoint {
  nlohmann::json metadata = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws DataError("checkpoint not found: ...") when the file is missing.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 64-bit FNV-1a of a byte string, hex-encoded. Used for manifests.
std::string content_hash(const std::string& bytes);
std::string file_hash(const std::filesystem::path& path);

}  // namespace bimsmt
