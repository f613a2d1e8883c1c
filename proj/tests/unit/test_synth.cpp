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


#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "lap/feature_store.hpp"
#include "lap/synth.hpp"
#include "temp_dir.hpp"

namespace lap {
namespace {

namespace fs = std::filesystem;

SynthSpec small_spec() {
  SynthSpec s;
  s.num_speakers = 5;
  s.train_utts_per_speaker = 4;
  s.eval_utts_per_speaker = 3;
  s.channels = 12;
  s.layers = 4;
  s.frames = 17;
  s.segment_frames = 3;
  s.seed = 21;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

TEST(Synth, ActiveLayerRotates) {
  const auto spec = small_spec();
  const auto u = make_utterance(spec, speaker_vectors(spec), 2, 1);
  ASSERT_EQ(u.active_layers.size(), 17u);
  for (std::size_t t = 0; t < 17; ++t)
    EXPECT_EQ(u.active_layers[t], (u.active_layers[0] + t / 3) % 4);
  EXPECT_EQ(u.stack.features.shape(), (Shape{12, 4, 17}));
  EXPECT_FALSE(u.held_out);
  EXPECT_TRUE(make_utterance(spec, speaker_vectors(spec), 2, 5).held_out);
}

TEST(Synth, SpeakerVectorsAreUnit) {
  const auto v = speaker_vectors(small_spec());
  for (std::size_t s = 0; s < 5; ++s) {
    double n = 0;
    for (std::size_t c = 0; c < 12; ++c) n += v.at(s, c) * v.at(s, c);
    EXPECT_NEAR(n, 1.0, 1e-12);
  }
}

TEST(Synth, NoiselessActiveContentMatchesAcrossUtterances) {
  auto spec = small_spec();
  spec.noise_std = 0;
  const auto v = speaker_vectors(spec);
  const auto a = make_utterance(spec, v, 1, 0), b = make_utterance(spec, v, 1, 2);
  for (std::size_t t = 0; t < spec.frames; ++t) {
    if (a.active_layers[t] != b.active_layers[t]) continue;
    const std::size_t l = a.active_layers[t];
    for (std::size_t c = 0; c < spec.channels; ++c) {
      EXPECT_EQ(a.stack.features.at(c, l, t), b.stack.features.at(c, l, t));
      EXPECT_FLOAT_EQ(a.stack.features.at(c, l, t), static_cast<float>(2.0 * v.at(1, c)));
    }
  }
  // The active layer always carries amplitude * v_s.
  for (std::size_t t = 0; t < spec.frames; ++t)
    EXPECT_FLOAT_EQ(a.stack.features.at(0, a.active_layers[t], t),
                    static_cast<float>(2.0 * v.at(1, 0)));
}

TEST(Synth, OracleClassifierIsPerfect) {
  SynthSpec spec;  // full toy spec
  spec.seed = 3;
  const auto v = speaker_vectors(spec);
  const auto utts = make_synth_utterances(spec);
  ASSERT_EQ(utts.size(), 32u * 50u);
  std::size_t errors = 0;
  for (const auto& u : utts) errors += oracle_classify(u.stack, u.active_layers, v) != u.speaker;
  EXPECT_EQ(errors, 0u);
}

TEST(Synth, TrialsCoverHeldOutPairs) {
  const auto utts = make_synth_utterances(small_spec());
  const auto trials = make_synth_trials(utts, 1);
  std::set<std::string> held;
  for (const auto& u : utts)
    if (u.held_out) held.insert(u.utt_id);
  std::size_t targets = 0, nontargets = 0;
  for (const auto& t : trials) {
    EXPECT_TRUE(held.count(t.enroll) && held.count(t.test));
    (t.label ? targets : nontargets) += 1;
  }
  EXPECT_EQ(targets, 5u * 3u);  // C(3, 2) per speaker
  EXPECT_EQ(nontargets, targets);
}

TEST(Synth, DatasetIsDeterministicAndValid) {
  testing::TempDir a("synth"), b("synth");
  const auto spec = small_spec();
  write_synth_dataset(spec, a.path());
  write_synth_dataset(spec, b.path());
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path());
    EXPECT_EQ(slurp(entry.path()), slurp(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 5u * 7u + 5u);
  const auto m = read_manifest(a / "manifest.tsv");
  EXPECT_EQ(m.rows.size(), 35u);
  EXPECT_TRUE(validate_store(m).all_ok());
  EXPECT_EQ(read_manifest(a / "train.tsv").rows.size(), 20u);
  EXPECT_EQ(read_manifest(a / "eval.tsv").rows.size(), 15u);
}

TEST(Synth, SeedChangesData) {
  auto s1 = small_spec(), s2 = small_spec();
  s2.seed = 22;
  const auto a = make_utterance(s1, speaker_vectors(s1), 0, 0);
  const auto b = make_utterance(s2, speaker_vectors(s2), 0, 0);
  EXPECT_NE(a.stack.features.storage(), b.stack.features.storage());
  SynthSpec bad = small_spec();
  bad.segment_frames = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

}  // namespace
}  // namespace lap
