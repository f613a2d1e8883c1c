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

#include "lap/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace lap {

namespace {

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 1 : 2;
}

template <typename U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U take(const char* what) {
    need(sizeof(U), what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i)
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += sizeof(U);
    return v;
  }

  std::string_view take_bytes(std::size_t n, const char* what) {
    need(n, what);
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw CheckpointError("corrupt checkpoint at offset " + std::to_string(pos_) +
                          ": " + why);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n)
      fail(std::string("truncated while reading ") + what + " (need " +
           std::to_string(n) + " bytes, " + std::to_string(bytes_.size() - pos_) +
           " left)");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename Real>
void Checkpoint::put(const std::string& name, const Tensor<Real>& t) {
  using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
  NamedTensor nt;
  nt.name = name;
  nt.dtype = dtype_tag<Real>();
  nt.shape = t.shape();
  nt.bytes.reserve(t.numel() * sizeof(Real));
  for (Real v : t.values()) put_le(nt.bytes, std::bit_cast<Bits>(v));
  tensors.push_back(std::move(nt));
}

template <typename Real>
Tensor<Real> Checkpoint::get(const std::string& name) const {
  using Bits = std::conditional_t<sizeof(Real) == 4, std::uint32_t, std::uint64_t>;
  for (const auto& nt : tensors) {
    if (nt.name != name) continue;
    if (nt.dtype != dtype_tag<Real>())
      throw CheckpointError("tensor '" + name + "' is stored as " +
                            (nt.dtype == 1 ? "float32" : "float64") +
                            ", requested " + (sizeof(Real) == 4 ? "float32" : "float64"));
    Tensor<Real> t(nt.shape);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      Bits b = 0;
      for (std::size_t k = 0; k < sizeof(Bits); ++k)
        b |= static_cast<Bits>(static_cast<unsigned char>(nt.bytes[i * sizeof(Bits) + k]))
             << (8 * k);
      t[i] = std::bit_cast<Real>(b);
    }
    return t;
  }
  throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& nt : tensors)
    if (nt.name == name) return true;
  return false;
}

std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out(kCheckpointMagic, 4);
  put_le(out, kCheckpointVersion);
  put_le(out, c.config_hash);
  put_le(out, c.epoch);
  put_le(out, c.step);
  put_le(out, static_cast<std::uint32_t>(c.config_text.size()));
  out += c.config_text;
  put_le(out, static_cast<std::uint32_t>(c.tensors.size()));
  for (const auto& t : c.tensors) {
    put_le(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_le(out, t.dtype);
    put_le(out, static_cast<std::uint32_t>(t.shape.size()));
    for (auto d : t.shape) put_le(out, static_cast<std::uint64_t>(d));
    out += t.bytes;
  }
  return out;
}

Checkpoint deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take_bytes(4, "magic") != std::string_view(kCheckpointMagic, 4))
    throw CheckpointError("corrupt checkpoint at offset 0: bad magic");
  const auto version = r.take<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    r.fail("unsupported version " + std::to_string(version));
  Checkpoint c;
  c.config_hash = r.take<std::uint64_t>("config hash");
  c.epoch = r.take<std::uint64_t>("epoch");
  c.step = r.take<std::uint64_t>("step");
  const auto text_len = r.take<std::uint32_t>("config length");
  c.config_text = std::string(r.take_bytes(text_len, "config text"));
  if (fnv1a64(c.config_text) != c.config_hash) r.fail("config hash does not match config text");
  const auto count = r.take<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const auto name_len = r.take<std::uint32_t>("tensor name length");
    t.name = std::string(r.take_bytes(name_len, "tensor name"));
    t.dtype = r.take<std::uint8_t>("dtype");
    if (t.dtype != 1 && t.dtype != 2)
      r.fail("unknown dtype tag " + std::to_string(t.dtype) + " for '" + t.name + "'");
    const auto rank = r.take<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) r.fail("implausible rank " + std::to_string(rank));
    std::uint64_t numel = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.take<std::uint64_t>("dimension");
      if (d == 0 || d > (1ull << 40) / numel) r.fail("implausible extent");
      numel *= d;
      t.shape.push_back(static_cast<std::size_t>(d));
    }
    const std::size_t width = t.dtype == 1 ? 4 : 8;
    t.bytes = std::string(r.take_bytes(numel * width, "tensor data"));
    c.tensors.push_back(std::move(t));
  }
  if (!r.done()) r.fail("trailing bytes after tensor table");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("cannot move checkpoint into " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return deserialize_checkpoint(ss.str());
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           std::uint64_t expected_hash) {
  Checkpoint c = load_checkpoint(path);
  if (c.config_hash != expected_hash)
    throw CheckpointError(path.string() +
                          ": checkpoint was written for a different model config");
  return c;
}

template void Checkpoint::put(const std::string&, const Tensor<float>&);
template void Checkpoint::put(const std::string&, const Tensor<double>&);
template Tensor<float> Checkpoint::get(const std::string&) const;
template Tensor<double> Checkpoint::get(const std::string&) const;

}  // namespace lap
