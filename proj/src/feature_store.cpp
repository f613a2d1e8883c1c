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

#include "lap/feature_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace lap {

namespace fs = std::filesystem;

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 |
         static_cast<std::uint32_t>(p[3]) << 24;
}

void put_f32(std::string& buf, float v) {
  put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

Lsf1Header decode_header(const unsigned char* raw, const fs::path& path) {
  if (std::memcmp(raw, kLsf1Magic, 4) != 0)
    throw StoreError(StoreError::Kind::BadMagic,
                     path.string() + ": not an LSF1 file (bad magic)");
  Lsf1Header h;
  h.version = get_u32(raw + 4);
  if (h.version != kLsf1Version)
    throw StoreError(StoreError::Kind::BadVersion,
                     path.string() + ": unsupported LSF1 version " +
                         std::to_string(h.version));
  h.channels = get_u32(raw + 8);
  h.layers = get_u32(raw + 12);
  h.frames = get_u32(raw + 16);
  h.dtype = raw[20];
  if (h.dtype != kLsf1Float32)
    throw StoreError(StoreError::Kind::BadDtype,
                     path.string() + ": unsupported dtype tag " +
                         std::to_string(h.dtype));
  if (!h.channels || !h.layers || !h.frames)
    throw StoreError(StoreError::Kind::BadHeader,
                     path.string() + ": zero extent in header");
  return h;
}

std::string read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw StoreError(StoreError::Kind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

template <typename Real>
void write_layerstack(const LayerStack<Real>& stack, const fs::path& path) {
  const auto& x = stack.features;
  if (x.rank() != 3) throw DimensionError("layer stack must be [C x N x T]");
  if (!x.all_finite())
    throw DomainError("layer stack " + stack.utt_id + " has non-finite values");
  const std::size_t c = x.dim(0), n = x.dim(1), t = x.dim(2);
  std::string buf;
  buf.reserve(kLsf1HeaderBytes + 4 * c * n * t);
  buf.append(kLsf1Magic, 4);
  put_u32(buf, kLsf1Version);
  put_u32(buf, static_cast<std::uint32_t>(c));
  put_u32(buf, static_cast<std::uint32_t>(n));
  put_u32(buf, static_cast<std::uint32_t>(t));
  buf.push_back(static_cast<char>(kLsf1Float32));
  for (std::size_t l = 0; l < n; ++l)
    for (std::size_t f = 0; f < t; ++f)
      for (std::size_t ch = 0; ch < c; ++ch)
        put_f32(buf, static_cast<float>(x.at(ch, l, f)));

  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw StoreError(StoreError::Kind::Io, "cannot write " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out)
      throw StoreError(StoreError::Kind::Io, "write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec)
    throw StoreError(StoreError::Kind::Io,
                     "cannot move " + tmp.string() + " to " + path.string() +
                         ": " + ec.message());
}

Lsf1Header read_lsf1_header(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StoreError(StoreError::Kind::Io, "cannot open " + path.string());
  unsigned char raw[kLsf1HeaderBytes];
  in.read(reinterpret_cast<char*>(raw), kLsf1HeaderBytes);
  if (in.gcount() != static_cast<std::streamsize>(kLsf1HeaderBytes))
    throw StoreError(StoreError::Kind::Truncated,
                     path.string() + ": truncated header (expected " +
                         std::to_string(kLsf1HeaderBytes) + " bytes, got " +
                         std::to_string(in.gcount()) + ")");
  return decode_header(raw, path);
}

template <typename Real>
LayerStack<Real> read_layerstack(const fs::path& path, std::string utt_id) {
  const std::string bytes = read_all(path);
  if (bytes.size() < kLsf1HeaderBytes)
    throw StoreError(StoreError::Kind::Truncated,
                     path.string() + ": truncated header (expected " +
                         std::to_string(kLsf1HeaderBytes) + " bytes, got " +
                         std::to_string(bytes.size()) + ")");
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data());
  const Lsf1Header h = decode_header(raw, path);
  const std::uint64_t expected = kLsf1HeaderBytes + h.payload_bytes();
  if (bytes.size() != expected)
    throw StoreError(StoreError::Kind::Truncated,
                     path.string() + ": payload length mismatch (expected " +
                         std::to_string(expected) + " bytes, got " +
                         std::to_string(bytes.size()) + ")");
  LayerStack<Real> s;
  s.utt_id = utt_id.empty() ? path.stem().string() : std::move(utt_id);
  s.features = Tensor<Real>(Shape{h.channels, h.layers, h.frames});
  const unsigned char* p = raw + kLsf1HeaderBytes;
  for (std::size_t l = 0; l < h.layers; ++l)
    for (std::size_t f = 0; f < h.frames; ++f)
      for (std::size_t ch = 0; ch < h.channels; ++ch, p += 4)
        s.features.at(ch, l, f) =
            static_cast<Real>(std::bit_cast<float>(get_u32(p)));
  return s;
}

std::map<std::string, std::size_t> Manifest::speaker_index() const {
  std::set<std::string> ids;
  for (const auto& r : rows) ids.insert(r.speaker_id);
  std::map<std::string, std::size_t> out;
  std::size_t i = 0;
  for (const auto& id : ids) out.emplace(id, i++);
  return out;
}

Manifest parse_manifest(std::istream& is, fs::path base_dir) {
  Manifest m;
  m.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const auto bad = [&](const std::string& why) {
      return StoreError(StoreError::Kind::Manifest,
                        "manifest line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 4) throw bad("expected 4 tab-separated fields");
    for (const auto& f : fields)
      if (f.empty()) throw bad("empty field");
    ManifestRow row{fields[0], fields[1], fields[2], 0};
    try {
      std::size_t used = 0;
      const long long v = std::stoll(fields[3], &used);
      if (used != fields[3].size() || v <= 0) throw std::invalid_argument("");
      row.num_frames = static_cast<std::size_t>(v);
    } catch (const std::exception&) {
      throw bad("num_frames must be a positive integer, got '" + fields[3] + "'");
    }
    if (!seen.insert(row.utt_id).second)
      throw bad("duplicate utt_id '" + row.utt_id + "'");
    m.rows.push_back(std::move(row));
  }
  return m;
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw StoreError(StoreError::Kind::Io, "cannot open " + path.string());
  return parse_manifest(in, path.parent_path());
}

void write_manifest(std::ostream& os, const Manifest& manifest) {
  for (const auto& r : manifest.rows)
    os << r.utt_id << '\t' << r.path << '\t' << r.speaker_id << '\t'
       << r.num_frames << '\n';
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw StoreError(StoreError::Kind::Io, "cannot write " + path.string());
  write_manifest(out, manifest);
}

bool StoreReport::all_ok() const { return consistent && failures() == 0; }

std::size_t StoreReport::failures() const {
  std::size_t n = 0;
  for (const auto& f : files) n += f.ok ? 0 : 1;
  return n;
}

StoreReport validate_store(const Manifest& manifest) {
  StoreReport report;
  bool have_ref = false;
  std::uint32_t ref_c = 0, ref_n = 0;
  std::string ref_id;
  for (const auto& row : manifest.rows) {
    StoreCheck check{row.utt_id, true, {}};
    try {
      const fs::path path = manifest.resolve(row);
      const Lsf1Header h = read_lsf1_header(path);
      const auto size = fs::file_size(path);
      if (size != kLsf1HeaderBytes + h.payload_bytes()) {
        check.ok = false;
        check.message = "payload length mismatch (expected " +
                        std::to_string(kLsf1HeaderBytes + h.payload_bytes()) +
                        " bytes, got " + std::to_string(size) + ")";
      } else if (h.frames != row.num_frames) {
        check.ok = false;
        check.message = "header T=" + std::to_string(h.frames) +
                        " but manifest num_frames=" +
                        std::to_string(row.num_frames);
      }
      if (!have_ref) {
        have_ref = true;
        ref_c = h.channels;
        ref_n = h.layers;
        ref_id = row.utt_id;
      } else if (h.channels != ref_c || h.layers != ref_n) {
        report.consistent = false;
        if (report.consistency_message.empty())
          report.consistency_message =
              "inconsistent store: " + row.utt_id + " has C=" +
              std::to_string(h.channels) + ", N=" + std::to_string(h.layers) +
              " but " + ref_id + " has C=" + std::to_string(ref_c) +
              ", N=" + std::to_string(ref_n);
      }
    } catch (const std::exception& e) {
      check.ok = false;
      check.message = e.what();
    }
    report.files.push_back(std::move(check));
  }
  return report;
}

template void write_layerstack(const LayerStack<float>&, const fs::path&);
template void write_layerstack(const LayerStack<double>&, const fs::path&);
template LayerStack<float> read_layerstack<float>(const fs::path&, std::string);
template LayerStack<double> read_layerstack<double>(const fs::path&, std::string);

}  // namespace lap
