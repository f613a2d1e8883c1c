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

#include "lap/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "lap/layer_pooling.hpp"

namespace lap {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

const ConfigKey* find_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

bool parse_bool(std::string_view v, bool& out) {
  if (v == "on" || v == "true" || v == "1" || v == "yes") {
    out = true;
    return true;
  }
  if (v == "off" || v == "false" || v == "0" || v == "no") {
    out = false;
    return true;
  }
  return false;
}

void check_value(const ConfigKey& key, std::string_view v) {
  bool ok = true;
  switch (key.type) {
    case KeyType::String:
      break;
    case KeyType::Integer: {
      std::int64_t x = 0;
      auto r = std::from_chars(v.data(), v.data() + v.size(), x);
      ok = r.ec == std::errc() && r.ptr == v.data() + v.size();
      break;
    }
    case KeyType::Real: {
      double x = 0;
      auto r = std::from_chars(v.data(), v.data() + v.size(), x);
      ok = r.ec == std::errc() && r.ptr == v.data() + v.size();
      break;
    }
    case KeyType::Bool: {
      bool b = false;
      ok = parse_bool(v, b);
      break;
    }
    case KeyType::Mode:
      try {
        parse_aggregation_mode(v);
      } catch (const std::exception&) {
        ok = false;
      }
      break;
  }
  if (!ok)
    throw ConfigError("invalid value '" + std::string(v) + "' for key '" +
                      key.name + "'");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  using K = KeyType;
  static const std::vector<ConfigKey> keys = {
      {"seed", K::Integer, "0", "master seed for data, init and shuffling"},
      // synthetic data
      {"num_speakers", K::Integer, "32", "gen-data: speakers"},
      {"train_utts", K::Integer, "40", "gen-data: training utterances per speaker"},
      {"eval_utts", K::Integer, "10", "gen-data: held-out utterances per speaker"},
      {"frames", K::Integer, "50", "gen-data: frames per utterance"},
      {"segment_frames", K::Integer, "5", "gen-data: frames per active-layer segment"},
      {"amplitude", K::Real, "2.0", "gen-data: speaker signal amplitude"},
      {"noise_std", K::Real, "0.5", "gen-data: additive noise std"},
      {"distractor_amplitude", K::Real, "2.0", "gen-data: inactive-layer amplitude"},
      // model
      {"channels", K::Integer, "32", "feature channels C"},
      {"layers", K::Integer, "8", "hidden states per stack N"},
      {"mode", K::Mode, "sigmoid-max", "sigmoid-max | softmax-sum | static-superb"},
      {"heads", K::Integer, "4", "LAP heads h"},
      {"head_dim", K::Integer, "8", "latent size per head d (0: C/h)"},
      {"out_dim", K::Integer, "64", "LAP output channels R"},
      {"bottleneck", K::Integer, "32", "ASTP attention width"},
      {"embed_dim", K::Integer, "32", "speaker embedding size"},
      {"precision", K::Integer, "32", "training numerics, 32 or 64 bit"},
      // objective
      {"subcenters", K::Integer, "3", "prototypes per speaker"},
      {"scale", K::Real, "30", "logit scale"},
      {"topk", K::Integer, "5", "penalized non-target classes"},
      {"margin_max", K::Real, "0.3", "final additive angular margin"},
      {"penalty_max", K::Real, "0.06", "final non-target penalty"},
      {"margin_start", K::Real, "0.01", "margin at epoch 1"},
      {"ramp_epochs", K::Integer, "20", "epoch at which the margin reaches its maximum"},
      {"large_margin", K::Real, "0.5", "margin of the large-margin stage"},
      {"large_margin_epochs", K::Integer, "0", "extra epochs at the large margin"},
      // optimisation
      {"epochs", K::Integer, "100", "main-stage epochs"},
      {"batch_size", K::Integer, "64", "utterances per step"},
      {"lr_min", K::Real, "1e-5", "one-cycle floor"},
      {"lr_max", K::Real, "1e-3", "one-cycle peak"},
      {"warmup", K::Real, "0.15", "fraction of steps spent warming up"},
      {"weight_decay", K::Real, "5e-5", "main-stage decoupled weight decay"},
      {"large_margin_weight_decay", K::Real, "1e-5", "large-margin-stage weight decay"},
      {"threads", K::Integer, "0", "worker threads (0: runtime default)"},
      {"checkpoint_every", K::Integer, "0", "also save <checkpoint>.epochN every n epochs (0: final only)"},
      {"resume", K::String, "", "checkpoint to continue training from"},
      // data and artifacts
      {"train_manifest", K::String, "", "training manifest (train)"},
      {"manifest", K::String, "", "manifest to embed or analyze"},
      {"checkpoint", K::String, "", "model checkpoint (embed, eval, analyze-layers)"},
      {"embeddings", K::String, "", "embedding table (score)"},
      {"trials", K::String, "", "trial list"},
      // scoring
      {"snorm", K::Bool, "off", "adaptive s-norm"},
      {"k_adapt", K::Integer, "100", "top cohort scores kept per side"},
      {"calibration", K::Bool, "off", "quality-aware calibration"},
      {"calibration_pairs", K::Integer, "30000", "training pairs sampled for calibration"},
      // analysis
      {"per_frame", K::Bool, "off", "analyze-layers: also write per-frame counts"},
      {"max_utts", K::Integer, "0", "analyze-layers: utterance cap (0: all)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_.emplace(k.name, k.default_value);
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const ConfigKey* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  value = trim(value);
  check_value(*k, value);
  values_.find(key)->second = std::string(value);
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos)
    throw ConfigError("override '" + std::string(assignment) +
                      "' is not of the form key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::parse(std::istream& is, const std::string& source) {
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    try {
      if (body.find('=') == std::string_view::npos)
        throw ConfigError("expected 'key = value'");
      apply_override(body);
    } catch (const ConfigError& e) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  parse(in, path.string());
}

const std::string& RunConfig::get(std::string_view key) const {
  const auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError("unknown config key '" + std::string(key) + "'");
  return it->second;
}

std::int64_t RunConfig::get_int(std::string_view key) const {
  const auto& v = get(key);
  std::int64_t x = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("key '" + std::string(key) + "' is not an integer: " + v);
  return x;
}

std::size_t RunConfig::get_size(std::string_view key) const {
  const auto x = get_int(key);
  if (x < 0) throw ConfigError("key '" + std::string(key) + "' must be non-negative");
  return static_cast<std::size_t>(x);
}

double RunConfig::get_real(std::string_view key) const {
  const auto& v = get(key);
  double x = 0;
  auto r = std::from_chars(v.data(), v.data() + v.size(), x);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("key '" + std::string(key) + "' is not a number: " + v);
  return x;
}

bool RunConfig::get_bool(std::string_view key) const {
  bool b = false;
  if (!parse_bool(get(key), b))
    throw ConfigError("key '" + std::string(key) + "' is not on/off");
  return b;
}

std::string RunConfig::echo() const {
  std::ostringstream os;
  for (const auto& k : config_keys()) os << k.name << " = " << get(k.name) << '\n';
  return os.str();
}

std::string RunConfig::echo(const std::vector<std::string>& keys) const {
  std::ostringstream os;
  for (const auto& k : keys) os << k << " = " << get(k) << '\n';
  return os.str();
}

}  // namespace lap
