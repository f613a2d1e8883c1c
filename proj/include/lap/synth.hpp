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

// Synthetic layer stacks where the speaker is visible in one layer per frame.
//
// Speaker s owns a unit vector v_s. Utterance u of speaker s starts at layer
// l0(u), and the active layer moves one step every `segment_frames` frames:
//
//   l(t) = (l0 + t / segment_frames) mod N
//   X[:, l(t), t] = amplitude * v_s + noise
//   X[:, l, t]    = distractor_amplitude * r(u, l, t / segment_frames) + noise
//
// where r(...) is a fresh random unit vector that does not depend on the
// speaker. Held-out utterances come from the same speakers.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lap/layer_pooling.hpp"

namespace lap {

struct SynthSpec {
  std::size_t num_speakers = 32;
  std::size_t train_utts_per_speaker = 40;
  std::size_t eval_utts_per_speaker = 10;
  std::size_t channels = 32;
  std::size_t layers = 8;
  std::size_t frames = 50;
  std::size_t segment_frames = 5;
  double amplitude = 2.0;
  double noise_std = 0.5;
  double distractor_amplitude = 2.0;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t utts_per_speaker() const {
    return train_utts_per_speaker + eval_utts_per_speaker;
  }
};

struct SynthUtterance {
  std::string utt_id;
  std::string speaker_id;
  std::size_t speaker = 0;
  bool held_out = false;
  std::vector<std::size_t> active_layers;  // l(t), one per frame
  LayerStack<float> stack;
};

/// Rows are the unit speaker vectors, [S x C].
Tensor<double> speaker_vectors(const SynthSpec& spec);

/// Utterance `index` (0-based, train first) of speaker `speaker`.
SynthUtterance make_utterance(const SynthSpec& spec,
                              const Tensor<double>& speakers,
                              std::size_t speaker, std::size_t index);

/// All utterances, speaker-major; generated in parallel with per-utterance
/// seeds so the result does not depend on the thread count.
std::vector<SynthUtterance> make_synth_utterances(const SynthSpec& spec);

/// Trials among held-out utterances: every same-speaker pair as a target,
/// plus as many random different-speaker pairs. Lines `label enroll test`.
struct SynthTrial {
  int label;
  std::string enroll;
  std::string test;
};
std::vector<SynthTrial> make_synth_trials(const std::vector<SynthUtterance>& utts,
                                          std::uint64_t seed);

/// Writes features/<utt>.lsf plus manifest.tsv, train.tsv, eval.tsv,
/// trials.txt and active_layers.tsv (`utt_id<TAB>l(0),l(1),...`) under dir.
void write_synth_dataset(const SynthSpec& spec, const std::filesystem::path& dir);

/// argmax_s sum_t <X[:, l(t), t], v_s>: the classifier that knows the
/// generator. Returns the predicted speaker index.
std::size_t oracle_classify(const LayerStack<float>& stack,
                            const std::vector<std::size_t>& active_layers,
                            const Tensor<double>& speakers);

}  // namespace lap
