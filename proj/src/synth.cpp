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

#include "lap/synth.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "lap/feature_store.hpp"
#include "lap/random.hpp"

namespace lap {

namespace fs = std::filesystem;

namespace {

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::vector<double> v(dim);
  double norm = 0;
  do {
    norm = 0;
    for (auto& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0);
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

std::string speaker_name(std::size_t s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "spk%03zu", s);
  return buf;
}

std::string utt_name(std::size_t s, std::size_t u) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "spk%03zu-u%03zu", s, u);
  return buf;
}

}  // namespace

void SynthSpec::validate() const {
  if (!num_speakers || !train_utts_per_speaker || !channels || !layers ||
      !frames || !segment_frames)
    throw std::invalid_argument("synthetic dataset sizes must be positive");
  if (layers > std::numeric_limits<std::uint16_t>::max())
    throw std::invalid_argument("too many layers");
  if (!(amplitude > 0) || !(distractor_amplitude >= 0) || !(noise_std >= 0))
    throw std::invalid_argument(
        "amplitude must be positive, distractor amplitude and noise non-negative");
}

Tensor<double> speaker_vectors(const SynthSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 0));
  Tensor<double> out(Shape{spec.num_speakers, spec.channels});
  for (std::size_t s = 0; s < spec.num_speakers; ++s) {
    const auto v = random_unit(rng, spec.channels);
    for (std::size_t c = 0; c < spec.channels; ++c) out.at(s, c) = v[c];
  }
  return out;
}

SynthUtterance make_utterance(const SynthSpec& spec, const Tensor<double>& speakers,
                              std::size_t speaker, std::size_t index) {
  const std::size_t c = spec.channels, n = spec.layers, t = spec.frames;
  const std::uint64_t global = speaker * spec.utts_per_speaker() + index;
  Rng rng(derive_seed(derive_seed(spec.seed, 1), global));

  SynthUtterance u;
  u.utt_id = utt_name(speaker, index);
  u.speaker_id = speaker_name(speaker);
  u.speaker = speaker;
  u.held_out = index >= spec.train_utts_per_speaker;
  u.stack.utt_id = u.utt_id;
  u.stack.features = Tensor<float>(Shape{c, n, t});

  const std::size_t start = rng.below(n);
  u.active_layers.resize(t);
  for (std::size_t f = 0; f < t; ++f)
    u.active_layers[f] = (start + f / spec.segment_frames) % n;

  const std::size_t segments = (t + spec.segment_frames - 1) / spec.segment_frames;
  std::vector<std::vector<double>> distractors(n * segments);
  for (auto& d : distractors) d = random_unit(rng, c);

  auto& x = u.stack.features;
  for (std::size_t f = 0; f < t; ++f) {
    const std::size_t seg = f / spec.segment_frames;
    for (std::size_t l = 0; l < n; ++l) {
      const bool active = l == u.active_layers[f];
      const auto& dir = distractors[l * segments + seg];
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double clean = active ? spec.amplitude * speakers.at(speaker, ch)
                                    : spec.distractor_amplitude * dir[ch];
        x.at(ch, l, f) = static_cast<float>(clean + spec.noise_std * rng.normal());
      }
    }
  }
  return u;
}

std::vector<SynthUtterance> make_synth_utterances(const SynthSpec& spec) {
  const auto speakers = speaker_vectors(spec);
  const std::size_t per = spec.utts_per_speaker();
  const std::size_t total = spec.num_speakers * per;
  std::vector<SynthUtterance> out(total);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(total); ++i) {
    const auto k = static_cast<std::size_t>(i);
    out[k] = make_utterance(spec, speakers, k / per, k % per);
  }
  return out;
}

std::vector<SynthTrial> make_synth_trials(const std::vector<SynthUtterance>& utts,
                                          std::uint64_t seed) {
  std::vector<const SynthUtterance*> eval;
  for (const auto& u : utts)
    if (u.held_out) eval.push_back(&u);
  std::vector<SynthTrial> out;
  for (std::size_t i = 0; i < eval.size(); ++i)
    for (std::size_t j = i + 1; j < eval.size(); ++j)
      if (eval[i]->speaker == eval[j]->speaker)
        out.push_back({1, eval[i]->utt_id, eval[j]->utt_id});
  const std::size_t targets = out.size();
  bool multi_speaker = false;
  for (const auto* u : eval) multi_speaker |= u->speaker != eval.front()->speaker;
  if (!multi_speaker) return out;
  Rng rng(derive_seed(seed, 2));
  for (std::size_t k = 0; k < targets;) {
    const auto* a = eval[rng.below(eval.size())];
    const auto* b = eval[rng.below(eval.size())];
    if (a->speaker == b->speaker) continue;
    out.push_back({0, a->utt_id, b->utt_id});
    ++k;
  }
  return out;
}

void write_synth_dataset(const SynthSpec& spec, const fs::path& dir) {
  const auto utts = make_synth_utterances(spec);
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec)
    throw StoreError(StoreError::Kind::Io,
                     "cannot create " + (dir / "features").string() + ": " +
                         ec.message());

  Manifest all, train, eval;
  std::vector<std::string> errors(utts.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(utts.size()); ++i) {
    const auto& u = utts[static_cast<std::size_t>(i)];
    try {
      write_layerstack(u.stack, dir / "features" / (u.utt_id + ".lsf"));
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw StoreError(StoreError::Kind::Io, e);

  for (const auto& u : utts) {
    ManifestRow row{u.utt_id, "features/" + u.utt_id + ".lsf", u.speaker_id,
                    spec.frames};
    all.rows.push_back(row);
    (u.held_out ? eval : train).rows.push_back(row);
  }
  write_manifest(dir / "manifest.tsv", all);
  write_manifest(dir / "train.tsv", train);
  write_manifest(dir / "eval.tsv", eval);

  std::ofstream trials(dir / "trials.txt");
  for (const auto& t : make_synth_trials(utts, spec.seed))
    trials << t.label << ' ' << t.enroll << ' ' << t.test << '\n';
  std::ofstream active(dir / "active_layers.tsv");
  for (const auto& u : utts) {
    active << u.utt_id << '\t';
    for (std::size_t f = 0; f < u.active_layers.size(); ++f)
      active << (f ? "," : "") << u.active_layers[f];
    active << '\n';
  }
  if (!trials || !active)
    throw StoreError(StoreError::Kind::Io, "cannot write trial or layer files in " +
                                               dir.string());
}

std::size_t oracle_classify(const LayerStack<float>& stack,
                            const std::vector<std::size_t>& active_layers,
                            const Tensor<double>& speakers) {
  const std::size_t c = stack.channels();
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < speakers.dim(0); ++s) {
    double score = 0;
    for (std::size_t f = 0; f < stack.frames(); ++f)
      for (std::size_t ch = 0; ch < c; ++ch)
        score += stack.features.at(ch, active_layers[f], f) * speakers.at(s, ch);
    if (score > best_score) {
      best_score = score;
      best = s;
    }
  }
  return best;
}

}  // namespace lap
