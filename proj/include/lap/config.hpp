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

// Flat `key = value` run configuration shared by every subcommand. Lines
// starting with '#' are comments; unknown keys and unparsable values are
// rejected with the offending source and line.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lap {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class KeyType { String, Integer, Real, Bool, Mode };

struct ConfigKey {
  std::string name;
  KeyType type;
  std::string default_value;
  std::string help;
};

/// Every accepted key with its default, in documentation order.
const std::vector<ConfigKey>& config_keys();

class RunConfig {
 public:
  RunConfig();

  void set(std::string_view key, std::string_view value);
  /// "key=value"
  void apply_override(std::string_view assignment);
  void parse(std::istream& is, const std::string& source = "<config>");
  void load_file(const std::filesystem::path& path);

  const std::string& get(std::string_view key) const;
  std::string get_string(std::string_view key) const { return get(key); }
  std::int64_t get_int(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;
  double get_real(std::string_view key) const;
  bool get_bool(std::string_view key) const;

  /// `key = value` lines, in documentation order.
  std::string echo() const;
  /// The subset of keys in `keys`, same format, in the given order.
  std::string echo(const std::vector<std::string>& keys) const;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace lap
