// Copyright 2026 The lapkit Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Single-file checkpoints. Layout, little-endian throughout:
//
//   "LAPC"  u32 version  u64 config_hash  u64 epoch  u64 step
//   u32 len + model config text (`key = value` lines)
//   u32 tensor count, then per tensor:
//     u32 len + name, u8 dtype (1 f32, 2 f64), u32 rank, u64 dims[rank],
//     raw element bytes

#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "lap/tensor.hpp"

namespace lap {

inline constexpr char kCheckpointMagic[4] = {'L', 'A', 'P', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);

struct NamedTensor {
  std::string name;
  std::uint8_t dtype = 0;
  Shape shape;
  std::string bytes;  // little-endian element data
};

struct Checkpoint {
  std::string config_text;
  std::uint64_t config_hash = 0;
  std::uint64_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;   // completed optimizer steps
  std::vector<NamedTensor> tensors;

  template <typename Real>
  void put(const std::string& name, const Tensor<Real>& t);
  /// Throws CheckpointError when missing or stored at another precision.
  template <typename Real>
  Tensor<Real> get(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
/// Errors report the byte offset where decoding failed.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Rejects a checkpoint whose config hash differs from `expected_hash`.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t expected_hash);

}  // namespace lap
