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

// Acceptance gate. Prints one PASS/FAIL line per criterion with the measured
// values and exits nonzero if any line fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "calibration_oracle.hpp"
#include "det_oracle.hpp"
#include "gradient_suite.hpp"
#include "lap/checkpoint.hpp"
#include "lap/embedder.hpp"
#include "lap/feature_store.hpp"
#include "lap/scoring.hpp"
#include "lap/synth.hpp"
#include "lap/trainer.hpp"
#include "temp_dir.hpp"

namespace {

using namespace lap;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Pinned thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr std::uint64_t kGradSeeds = 3;
constexpr double kParamBase = 1.7e6;
constexpr double kParamLarge = 2.3e6;
constexpr double kParamBand = 0.20;
constexpr std::size_t kMetricSets = 200;
constexpr std::size_t kMetricTrials = 1000;
constexpr double kSnormExpected = 1.75;
constexpr double kSnormTolerance = 1e-12;
constexpr double kCalibrationTolerance = 0.05;
constexpr std::size_t kCalibrationSamples = 200000;
constexpr double kToyEer = 0.05;
constexpr int kToyWins = 2;
constexpr std::size_t kToyEpochs = 100;  // 20 steps of 64 per epoch
constexpr double kAgreement = 0.60;
constexpr double kMinute = 60.0;

int failures = 0;

void report(bool ok, const char* name, const std::string& detail) {
  std::printf("%s %-14s %s\n", ok ? "PASS" : "FAIL", name, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename T>
bool same_bits(const std::vector<T>& a, const std::vector<T>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(T)) == 0;
}

void gradients() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_op;
  std::size_t checks = 0;
  for (const auto& op : testing::gradient_ops())
    for (std::uint64_t seed = 1; seed <= kGradSeeds; ++seed) {
      const auto g = testing::check_gradient(op, seed);
      ++checks;
      if (!(g.max_rel_error <= worst)) {
        worst = g.max_rel_error;
        worst_op = op;
      }
    }
  const double secs = seconds_since(t0);
  report(worst < kGradTolerance && secs < kMinute, "gradients",
         fmt("ops=%zu seeds=%llu checks=%zu max_rel_err=%.3g (%s) limit=%.0e time=%.1fs",
             testing::gradient_ops().size(), static_cast<unsigned long long>(kGradSeeds),
             checks, worst, worst_op.c_str(), kGradTolerance, secs));
}

void parameter_counts() {
  const double base = static_cast<double>(count_parameters(BackendConfig::base()));
  const double large = static_cast<double>(count_parameters(BackendConfig::large()));
  const double db = base / kParamBase - 1, dl = large / kParamLarge - 1;
  report(std::abs(db) <= kParamBand && std::abs(dl) <= kParamBand, "param-counts",
         fmt("base=%.0f (%+.1f%% of 1.7M) large=%.0f (%+.1f%% of 2.3M) band=+-%.0f%%", base,
             100 * db, large, 100 * dl, 100 * kParamBand));
}

void detection_metrics() {
  const auto t0 = Clock::now();
  const auto sweep = testing::compare_with_oracle(kMetricSets, kMetricTrials, 2026);
  const double secs = seconds_since(t0);
  report(sweep.sets == kMetricSets && sweep.oracle_mismatches == 0 &&
             sweep.invariance_failures == 0 && sweep.max_trials <= kMetricTrials &&
             secs < kMinute,
         "det-metrics",
         fmt("sets=%zu max_trials=%zu oracle_mismatches=%zu invariance_failures=%zu "
             "time=%.1fs",
             sweep.sets, sweep.max_trials, sweep.oracle_mismatches, sweep.invariance_failures,
             secs));
}

void scoring_backend() {
  const double s = snorm(0.5, {0.2, 0.1}, {0.4, 0.2});
  const auto fit = testing::recover_planted_calibration(kCalibrationSamples, 17);
  const double err = fit.max_rel_error();
  report(std::abs(s - kSnormExpected) <= kSnormTolerance && fit.converged &&
             err < kCalibrationTolerance,
         "snorm-calib",
         fmt("snorm=%.12g calibration_max_rel_err=%.4f limit=%.2f converged=%d", s, err,
             kCalibrationTolerance, fit.converged ? 1 : 0));
}

struct ToyData {
  std::vector<SynthUtterance> utts;
  TrainingSet<float> train;
  std::vector<const SynthUtterance*> held_out;
  std::vector<Trial> trials;
  std::vector<int> labels;
};

ToyData make_toy(std::uint64_t seed) {
  SynthSpec spec;  // 32 speakers, C=32, N=8, T=50
  spec.seed = seed;
  ToyData d;
  d.utts = make_synth_utterances(spec);
  for (const auto& u : d.utts) {
    if (u.held_out) {
      d.held_out.push_back(&u);
      continue;
    }
    d.train.stacks.push_back(u.stack);
    d.train.labels.push_back(u.speaker);
  }
  for (const auto& t : make_synth_trials(d.utts, seed)) {
    d.trials.push_back({t.enroll, t.test, t.label});
    d.labels.push_back(t.label);
  }
  return d;
}

TrainConfig toy_config(AggregationMode mode, std::uint64_t seed, std::size_t speakers) {
  TrainConfig c;  // toy backend: h=4, d=8, R=64
  c.backend.lap.mode = mode;
  c.speakers = speakers;
  c.epochs = kToyEpochs;
  c.batch_size = 64;
  c.seed = seed;
  return c;
}

double held_out_eer(const ToyData& d, Trainer<float>& t) {
  std::vector<LayerStack<float>> stacks;
  for (const auto* u : d.held_out) stacks.push_back(u->stack);
  const EmbeddingTable table(extract_embeddings(stacks, t.backend()));
  return eer(score_trials(d.trials, table), d.labels).value;
}

// Layer statistics of a trained sigmoid-max model over the held-out set.
void layer_usage_check(const ToyData& d, Trainer<float>& t) {
  const std::size_t layers = t.config().backend.lap.layers;
  const std::size_t per_frame =
      t.config().backend.lap.heads * t.config().backend.lap.resolved_head_dim();
  std::uint64_t expected = 0, selected = 0, frames = 0, agree = 0;
  for (const auto* u : d.held_out) {
    Tape<float> tape;
    const auto fwd = embed_forward(tape, u->stack, t.backend());
    for (auto c : layer_usage(fwd.records, layers)) selected += c;
    expected += per_frame * u->stack.frames();
    const auto dom = dominant_layer_per_frame(fwd.records, layers);
    for (std::size_t f = 0; f < dom.size(); ++f) agree += dom[f] == u->active_layers[f];
    frames += dom.size();
  }
  const double rate = static_cast<double>(agree) / static_cast<double>(frames);
  report(selected == expected && rate > kAgreement, "layer-usage",
         fmt("selected=%llu expected_h*d*sumT=%llu dominant_agreement=%.4f (%llu/%llu) "
             "limit=%.2f",
             static_cast<unsigned long long>(selected),
             static_cast<unsigned long long>(expected), rate,
             static_cast<unsigned long long>(agree), static_cast<unsigned long long>(frames),
             kAgreement));
}

void toy_training() {
  const auto t0 = Clock::now();
  int wins = 0;
  bool below = true;
  std::string detail;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const ToyData d = make_toy(seed);
    double result[2] = {0, 0};
    const AggregationMode modes[2] = {AggregationMode::SigmoidMax,
                                      AggregationMode::StaticSuperb};
    for (int m = 0; m < 2; ++m) {
      const auto r0 = Clock::now();
      Trainer<float> t(toy_config(modes[m], seed, 32));
      while (!t.finished()) t.run_epoch(d.train);
      result[m] = held_out_eer(d, t);
      std::printf("  toy seed=%llu mode=%s steps=%zu eer=%.4f time=%.1fs\n",
                  static_cast<unsigned long long>(seed), to_string(modes[m]).c_str(), t.step(),
                  result[m], seconds_since(r0));
      std::fflush(stdout);
      if (seed == 0 && m == 0) layer_usage_check(d, t);
    }
    below = below && result[0] < kToyEer;
    wins += result[0] < result[1];
    detail += fmt("seed%llu=%.4f/%.4f ", static_cast<unsigned long long>(seed), result[0],
                  result[1]);
  }
  const double secs = seconds_since(t0);
  report(below && wins >= kToyWins && secs < 10 * kMinute, "toy-training",
         fmt("sigmoid-max/static-superb eer %swins=%d/3 limit_eer=%.2f time=%.1fs",
             detail.c_str(), wins, kToyEer, secs));
}

void determinism() {
  // Two identical short runs on a reduced toy set.
  SynthSpec spec;
  spec.num_speakers = 8;
  spec.train_utts_per_speaker = 16;
  spec.eval_utts_per_speaker = 0;
  spec.seed = 11;
  TrainingSet<float> data;
  std::vector<SynthUtterance> utts = make_synth_utterances(spec);
  for (const auto& u : utts) {
    data.stacks.push_back(u.stack);
    data.labels.push_back(u.speaker);
  }
  std::string logs[2];
  std::string ckpt_bytes[2];
  for (int run = 0; run < 2; ++run) {
    TrainConfig c = toy_config(AggregationMode::SigmoidMax, 5, spec.num_speakers);
    c.epochs = 4;
    c.batch_size = 16;
    Trainer<float> t(c);
    std::ostringstream os;
    write_metrics_header(os);
    while (!t.finished()) write_metrics_row(os, t.run_epoch(data));
    logs[run] = os.str();
    ckpt_bytes[run] = serialize_checkpoint(t.checkpoint());
  }

  testing::TempDir dir("acceptance");
  // LSF1 at both precisions.
  bool lsf_ok = true;
  for (const auto& u : utts) {
    const fs::path p32 = dir / (u.utt_id + ".f32.lsf");
    const fs::path p64 = dir / (u.utt_id + ".f64.lsf");
    write_layerstack(u.stack, p32);
    LayerStack<double> wide{u.utt_id, u.stack.features.cast<double>()};
    write_layerstack(wide, p64);
    const auto back32 = read_layerstack<float>(p32, u.utt_id);
    const auto back64 = read_layerstack<double>(p64, u.utt_id);
    lsf_ok = lsf_ok && back32.features.shape() == u.stack.features.shape() &&
             same_bits(back32.features.storage(), u.stack.features.storage()) &&
             same_bits(back64.features.storage(), wide.features.storage());
  }
  // Checkpoint: bytes -> file -> bytes.
  const fs::path ck = dir / "model.ckpt";
  save_checkpoint(deserialize_checkpoint(ckpt_bytes[0]), ck);
  const bool ckpt_ok = serialize_checkpoint(load_checkpoint(ck)) == ckpt_bytes[0];

  report(logs[0] == logs[1] && ckpt_bytes[0] == ckpt_bytes[1] && lsf_ok && ckpt_ok,
         "determinism",
         fmt("metric_logs_identical=%d checkpoints_identical=%d lsf1_roundtrip=%d (%zu files "
             "x2) checkpoint_roundtrip=%d",
             logs[0] == logs[1], ckpt_bytes[0] == ckpt_bytes[1], lsf_ok, utts.size(),
             ckpt_ok));
}

}  // namespace

int main() {
  const auto t0 = Clock::now();
  gradients();
  parameter_counts();
  detection_metrics();
  scoring_backend();
  toy_training();  // also reports layer-usage
  determinism();
  std::printf("%s %d failure(s), total %.1fs\n", failures ? "FAILED" : "ALL PASS", failures,
              seconds_since(t0));
  return failures ? 1 : 0;
}
