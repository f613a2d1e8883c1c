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

// LSF1 layer-stack files and TSV manifests.
//
// LSF1 layout, all integers little-endian:
//
//   offset  size  field
//   0       4     magic "LAPF"
//   4       4     version (u32) = 1
//   8       4     C (u32)
//   12      4     N (u32)
//   16      4     T (u32)
//   20      1     dtype (u8), 1 = float32
//   21      4*C*N*T payload, float32 LE, ordered [N][T][C]
//
// Manifest rows: utt_id<TAB>relative_path<TAB>speaker_id<TAB>num_frames,
// paths relative to the manifest's directory.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "lap/layer_pooling.hpp"

namespace lap {

inline constexpr char kLsf1Magic[4] = {'L', 'A', 'P', 'F'};
inline constexpr std::uint32_t kLsf1Version = 1;
inline constexpr std::uint8_t kLsf1Float32 = 1;
inline constexpr std::size_t kLsf1HeaderBytes = 21;

struct Lsf1Header {
  std::uint32_t version = kLsf1Version;
  std::uint32_t channels = 0;
  std::uint32_t layers = 0;
  std::uint32_t frames = 0;
  std::uint8_t dtype = kLsf1Float32;

  std::uint64_t payload_bytes() const {
    return 4ull * channels * layers * frames;
  }
};

class StoreError : public std::runtime_error {
 public:
  enum class Kind { Io, BadMagic, BadVersion, BadDtype, BadHeader, Truncated, Manifest };

  StoreError(Kind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Writes header + payload to a temporary sibling and renames it into place.
template <typename Real>
void write_layerstack(const LayerStack<Real>& stack,
                      const std::filesystem::path& path);

Lsf1Header read_lsf1_header(const std::filesystem::path& path);

/// Validates the header and the exact payload length before decoding.
template <typename Real>
LayerStack<Real> read_layerstack(const std::filesystem::path& path,
                                 std::string utt_id = {});

struct ManifestRow {
  std::string utt_id;
  std::string path;  // relative to the manifest directory
  std::string speaker_id;
  std::size_t num_frames = 0;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestRow> rows;

  /// Sorted speaker ids mapped to 0..S-1.
  std::map<std::string, std::size_t> speaker_index() const;
  std::filesystem::path resolve(const ManifestRow& row) const {
    return base_dir / row.path;
  }
};

/// Strict TSV; duplicate utt ids and malformed rows raise StoreError with
/// the line number.
Manifest parse_manifest(std::istream& is, std::filesystem::path base_dir = {});
Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(std::ostream& os, const Manifest& manifest);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct StoreCheck {
  std::string utt_id;
  bool ok = true;
  std::string message;
};

struct StoreReport {
  std::vector<StoreCheck> files;
  bool consistent = true;  // C and N agree across the store
  std::string consistency_message;

  bool all_ok() const;
  std::size_t failures() const;
};

/// Checks every referenced header against its manifest row and that C and N
/// agree across the store. Never throws for per-file problems.
StoreReport validate_store(const Manifest& manifest);

}  // namespace lap
