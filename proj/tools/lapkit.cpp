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

// lapkit: data generation, training, embedding, scoring, evaluation and
// layer-usage analysis behind one entry point.
//
// Exit codes: 0 success, 2 configuration or input-content error (unknown
// key, missing id, wrong model variant), 3 I/O or file-format error,
// 4 non-finite training loss.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lap/checkpoint.hpp"
#include "lap/config.hpp"
#include "lap/embedder.hpp"
#include "lap/feature_store.hpp"
#include "lap/kernels.hpp"
#include "lap/random.hpp"
#include "lap/scoring.hpp"
#include "lap/synth.hpp"
#include "lap/trainer.hpp"

namespace fs = std::filesystem;
using namespace lap;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNonFinite = 4;

// Input-content problems that are the caller's to fix; mapped to exit 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised for missing or unwritable paths; mapped to exit 3.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::int64_t> seed;
  std::string out;
  std::string snorm;
  std::string path;  // inspect
};

RunConfig resolve(const Options& o, const std::string& command) {
  RunConfig rc;
  if (!o.config.empty()) rc.load_file(o.config);
  for (const auto& s : o.sets) rc.apply_override(s);
  if (o.seed) rc.set("seed", std::to_string(*o.seed));
  if (!o.snorm.empty()) rc.set("snorm", o.snorm);
  if (const auto n = rc.get_int("threads"); n > 0)
    kernels::set_num_threads(static_cast<int>(n));
  std::cout << "# lapkit " << command << ": resolved config\n" << rc.echo() << std::flush;
  return rc;
}

fs::path output_dir(const Options& o, bool required) {
  if (o.out.empty()) {
    if (required) throw UsageError("--out DIR is required");
    return ".";
  }
  const fs::path dir = o.out;
  if (!fs::is_directory(dir))
    throw IoError("output directory " + dir.string() + " does not exist");
  return dir;
}

std::string require(const RunConfig& rc, const std::string& key,
                    const std::string& command) {
  const std::string& v = rc.get(key);
  if (v.empty()) throw UsageError(command + " needs '" + key + "' (--set " + key + "=...)");
  return v;
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path.string());
  return os;
}

SynthSpec synth_spec_from(const RunConfig& rc) {
  SynthSpec s;
  s.num_speakers = rc.get_size("num_speakers");
  s.train_utts_per_speaker = rc.get_size("train_utts");
  s.eval_utts_per_speaker = rc.get_size("eval_utts");
  s.channels = rc.get_size("channels");
  s.layers = rc.get_size("layers");
  s.frames = rc.get_size("frames");
  s.segment_frames = rc.get_size("segment_frames");
  s.amplitude = rc.get_real("amplitude");
  s.noise_std = rc.get_real("noise_std");
  s.distractor_amplitude = rc.get_real("distractor_amplitude");
  s.seed = static_cast<std::uint64_t>(rc.get_int("seed"));
  return s;
}

Manifest load_valid_manifest(const std::string& path) {
  Manifest m = read_manifest(path);
  const StoreReport report = validate_store(m);
  if (!report.all_ok()) {
    std::ostringstream msg;
    msg << path << ": " << report.failures() << " invalid file(s)";
    for (const auto& f : report.files)
      if (!f.ok) {
        msg << "; " << f.utt_id << ": " << f.message;
        break;
      }
    if (!report.consistent) msg << "; " << report.consistency_message;
    throw StoreError(StoreError::Kind::Manifest, msg.str());
  }
  return m;
}

template <typename Real>
std::vector<LayerStack<Real>> load_stacks(const Manifest& m, std::size_t limit = 0) {
  const std::size_t n = limit ? std::min(limit, m.rows.size()) : m.rows.size();
  std::vector<LayerStack<Real>> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(read_layerstack<Real>(m.resolve(m.rows[i]), m.rows[i].utt_id));
  return out;
}

// ---------------------------------------------------------------------------
// gen-data

int cmd_gen_data(const Options& o) {
  const RunConfig rc = resolve(o, "gen-data");
  const fs::path dir = output_dir(o, true);
  const SynthSpec spec = synth_spec_from(rc);
  write_synth_dataset(spec, dir);
  const Manifest m = read_manifest(dir / "manifest.tsv");
  const StoreReport report = validate_store(m);
  std::cout << "utterances=" << m.rows.size() << "\nspeakers=" << m.speaker_index().size()
            << "\nstore_ok=" << (report.all_ok() ? 1 : 0) << '\n';
  if (!report.all_ok()) throw StoreError(StoreError::Kind::Manifest, "generated store fails validation");
  return 0;
}

// ---------------------------------------------------------------------------
// train

template <typename Real>
int train_with(const RunConfig& rc, TrainConfig tc, const fs::path& dir) {
  const Manifest m = load_valid_manifest(require(rc, "train_manifest", "train"));
  const auto index = m.speaker_index();
  tc.speakers = index.size();
  TrainingSet<Real> data;
  data.stacks = load_stacks<Real>(m);
  for (const auto& row : m.rows) data.labels.push_back(index.at(row.speaker_id));

  const std::string& resume = rc.get("resume");
  std::optional<Trainer<Real>> trainer;
  if (resume.empty())
    trainer.emplace(tc);
  else
    trainer.emplace(tc, load_checkpoint(resume, tc.model_hash()));

  const fs::path ckpt_path =
      rc.get("checkpoint").empty() ? dir / "model.ckpt" : fs::path(rc.get("checkpoint"));
  const std::size_t every = rc.get_size("checkpoint_every");
  auto metrics = open_out(dir / "metrics.tsv");
  write_metrics_header(metrics);
  while (!trainer->finished()) {
    MetricsRow row;
    try {
      row = trainer->run_epoch(data);
    } catch (const NonFiniteLoss&) {
      metrics.flush();
      throw;
    }
    write_metrics_row(metrics, row);
    metrics.flush();
    std::fprintf(stderr, "epoch %zu step %zu lr %.3g margin %.3f loss %.4f acc %.3f\n",
                 row.epoch, row.step, row.lr, row.margin, row.loss, row.acc);
    if (every && trainer->epoch() % every == 0 && !trainer->finished()) {
      fs::path snap = ckpt_path;
      snap.replace_filename(ckpt_path.stem().string() + ".epoch" +
                            std::to_string(trainer->epoch()) + ckpt_path.extension().string());
      save_checkpoint(trainer->checkpoint(), snap);
    }
  }
  save_checkpoint(trainer->checkpoint(), ckpt_path);
  std::cout << "checkpoint=" << ckpt_path.string() << "\nepochs=" << trainer->epoch()
            << "\nsteps=" << trainer->step() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig rc = resolve(o, "train");
  const fs::path dir = output_dir(o, true);
  TrainConfig tc = train_config_from(rc);
  if (tc.precision == 64) return train_with<double>(rc, tc, dir);
  if (tc.precision == 32) return train_with<float>(rc, tc, dir);
  throw UsageError("precision must be 32 or 64");
}

// ---------------------------------------------------------------------------
// embed / score / eval

struct LoadedModel {
  Checkpoint ckpt;
  TrainConfig config;
};

LoadedModel load_model(const RunConfig& rc, const std::string& command) {
  LoadedModel lm;
  lm.ckpt = load_checkpoint(require(rc, "checkpoint", command));
  lm.config = model_config_from_text(lm.ckpt.config_text);
  return lm;
}

template <typename Real>
std::vector<SpeakerEmbedding> embed_manifest_as(const LoadedModel& lm, const Manifest& m) {
  auto params = backend_from_checkpoint<Real>(lm.ckpt);
  const auto stacks = load_stacks<Real>(m);
  return extract_embeddings(stacks, params);
}

std::vector<SpeakerEmbedding> embed_manifest(const LoadedModel& lm, const Manifest& m) {
  return lm.config.precision == 64 ? embed_manifest_as<double>(lm, m)
                                   : embed_manifest_as<float>(lm, m);
}

// Cohort and calibration state derived from the training side.
struct ScoringSetup {
  std::optional<Tensor<double>> cohort;
  ScoreOptions options;
};

ScoringSetup prepare_scoring(const RunConfig& rc, const EmbeddingTable& table,
                             const std::string& command) {
  ScoringSetup setup;
  const bool snorm = rc.get_bool("snorm");
  const bool calibrate = rc.get_bool("calibration");
  if (!snorm && !calibrate) return setup;

  const Manifest train = read_manifest(require(rc, "train_manifest", command));
  std::vector<SpeakerEmbedding> embs;
  std::vector<std::string> speaker_of;
  for (const auto& row : train.rows) {
    embs.push_back(table.at(row.utt_id));
    speaker_of.push_back(row.speaker_id);
  }
  ScoreOptions cohort_opts;
  if (snorm) {
    setup.cohort = build_cohort(embs, speaker_of);
    // A cohort smaller than k_adapt is used whole.
    setup.options.k_adapt = std::min(rc.get_size("k_adapt"), setup.cohort->dim(0));
    setup.options.cohort = &*setup.cohort;
    cohort_opts = setup.options;
  }
  if (calibrate) {
    const auto pairs = sample_pairs(speaker_of, rc.get_size("calibration_pairs"),
                                    derive_seed(static_cast<std::uint64_t>(rc.get_int("seed")), 5));
    std::vector<Trial> trials;
    for (const auto& [i, j] : pairs)
      trials.push_back({embs[i].utt_id, embs[j].utt_id, speaker_of[i] == speaker_of[j]});
    const auto scores = score_trials(trials, table, cohort_opts);
    std::vector<CalibrationSample> samples;
    for (std::size_t t = 0; t < pairs.size(); ++t)
      samples.push_back({scores[t], static_cast<double>(embs[pairs[t].first].num_frames),
                         static_cast<double>(embs[pairs[t].second].num_frames),
                         trials[t].label});
    const CalibrationFit fit = fit_calibration(samples);
    const auto& w = fit.model;
    std::fprintf(stderr, "calibration: w0 %.6g w1 %.6g w2 %.6g w3 %.6g (%zu iterations%s)\n",
                 w.w0, w.w1, w.w2, w.w3, fit.iterations,
                 fit.converged ? "" : ", not converged");
    setup.options.calibration = fit.model;
  }
  return setup;
}

std::vector<Trial> load_trials(const RunConfig& rc, const std::string& command) {
  const std::string path = require(rc, "trials", command);
  std::ifstream is(path);
  if (!is) throw IoError("cannot open trials " + path);
  return parse_trials(is);
}

int cmd_embed(const Options& o) {
  const RunConfig rc = resolve(o, "embed");
  const fs::path dir = output_dir(o, false);
  const LoadedModel lm = load_model(rc, "embed");
  const Manifest m = load_valid_manifest(require(rc, "manifest", "embed"));
  const auto embs = embed_manifest(lm, m);
  const fs::path path =
      rc.get("embeddings").empty() ? dir / "embeddings.tsv" : fs::path(rc.get("embeddings"));
  auto os = open_out(path);
  write_embeddings_tsv(os, embs);
  std::cout << "embeddings=" << path.string() << "\ncount=" << embs.size() << '\n';
  return 0;
}

int cmd_score(const Options& o) {
  const RunConfig rc = resolve(o, "score");
  const fs::path dir = output_dir(o, false);
  const std::string emb_path = require(rc, "embeddings", "score");
  std::ifstream is(emb_path);
  if (!is) throw IoError("cannot open embeddings " + emb_path);
  const EmbeddingTable table(read_embeddings_tsv(is));
  const auto trials = load_trials(rc, "score");
  const ScoringSetup setup = prepare_scoring(rc, table, "score");
  const auto scores = score_trials(trials, table, setup.options);
  auto os = open_out(dir / "scores.tsv");
  write_scores_tsv(os, trials, scores);
  std::cout << "scores=" << (dir / "scores.tsv").string() << "\ntrials=" << trials.size() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig rc = resolve(o, "eval");
  const fs::path dir = output_dir(o, false);
  const LoadedModel lm = load_model(rc, "eval");
  const Manifest m = load_valid_manifest(require(rc, "manifest", "eval"));
  auto embs = embed_manifest(lm, m);
  if (rc.get_bool("snorm") || rc.get_bool("calibration")) {
    const Manifest train = load_valid_manifest(require(rc, "train_manifest", "eval"));
    std::map<std::string, bool> seen;
    for (const auto& e : embs) seen[e.utt_id] = true;
    Manifest extra = train;
    extra.rows.clear();
    for (const auto& row : train.rows)
      if (!seen.count(row.utt_id)) extra.rows.push_back(row);
    for (auto& e : embed_manifest(lm, extra)) embs.push_back(std::move(e));
  }
  const EmbeddingTable table(std::move(embs));
  const auto trials = load_trials(rc, "eval");
  for (const auto& t : trials)
    if (t.label < 0) throw UsageError("eval needs labeled trials (label enroll test)");
  const ScoringSetup setup = prepare_scoring(rc, table, "eval");
  const auto scores = score_trials(trials, table, setup.options);

  auto os = open_out(dir / "scores.tsv");
  write_scores_tsv(os, trials, scores);
  std::vector<int> labels;
  for (const auto& t : trials) labels.push_back(t.label);
  const DetSummary summary = summarize(scores, labels);
  auto ms = open_out(dir / "metrics.txt");
  write_metrics(ms, summary);
  write_metrics(std::cout, summary);
  return 0;
}

// ---------------------------------------------------------------------------
// analyze-layers

template <typename Real>
std::vector<LayerAttentionRecord> layer_records(const LoadedModel& lm,
                                                const std::vector<LayerStack<Real>>& stacks) {
  auto params = backend_from_checkpoint<Real>(lm.ckpt);
  std::vector<std::vector<LayerAttentionRecord>> per(stacks.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(stacks.size()); ++i) {
    Tape<Real> tape;
    per[i] = embed_forward(tape, stacks[i], params).records;
  }
  std::vector<LayerAttentionRecord> out;
  for (auto& r : per)
    for (auto& rec : r) out.push_back(std::move(rec));
  return out;
}

int cmd_analyze_layers(const Options& o) {
  const RunConfig rc = resolve(o, "analyze-layers");
  const fs::path dir = output_dir(o, false);
  const LoadedModel lm = load_model(rc, "analyze-layers");
  const auto mode = lm.config.backend.lap.mode;
  if (mode != AggregationMode::SigmoidMax)
    throw UsageError("analyze-layers needs a sigmoid-max checkpoint; this one is " +
                     to_string(mode) +
                     ", which weights every layer instead of selecting one per latent value");
  const Manifest m = load_valid_manifest(require(rc, "manifest", "analyze-layers"));
  const std::size_t limit = rc.get_size("max_utts");
  std::vector<LayerAttentionRecord> records;
  std::size_t frames_total = 0;
  if (lm.config.precision == 64) {
    const auto stacks = load_stacks<double>(m, limit);
    for (const auto& s : stacks) frames_total += s.frames();
    records = layer_records(lm, stacks);
  } else {
    const auto stacks = load_stacks<float>(m, limit);
    for (const auto& s : stacks) frames_total += s.frames();
    records = layer_records(lm, stacks);
  }
  const std::size_t layers = lm.config.backend.lap.layers;
  const auto counts = layer_usage(records, layers);
  auto os = open_out(dir / "layer_usage.csv");
  write_layer_usage_csv(os, counts);

  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  std::cout << "layer_usage=" << (dir / "layer_usage.csv").string() << "\nselected=" << total
            << "\nutterances=" << (limit ? std::min(limit, m.rows.size()) : m.rows.size())
            << "\nframes=" << frames_total << '\n';

  if (rc.get_bool("per_frame")) {
    const auto grid = layer_usage_per_frame(records, layers);
    auto pf = open_out(dir / "layer_usage_per_frame.csv");
    pf << "layer";
    const std::size_t frames = grid.empty() ? 0 : grid.front().size();
    for (std::size_t t = 0; t < frames; ++t) pf << ",t" << t;
    pf << '\n';
    for (std::size_t l = 0; l < grid.size(); ++l) {
      pf << l;
      for (auto c : grid[l]) pf << ',' << c;
      pf << '\n';
    }
    std::cout << "layer_usage_per_frame=" << (dir / "layer_usage_per_frame.csv").string()
              << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------
// inspect

int inspect_manifest(const fs::path& path) {
  const Manifest m = read_manifest(path);
  const StoreReport report = validate_store(m);
  std::cout << "kind=manifest\nrows=" << m.rows.size()
            << "\nspeakers=" << m.speaker_index().size()
            << "\ninvalid_files=" << report.failures()
            << "\nconsistent=" << (report.consistent ? 1 : 0) << '\n';
  for (const auto& f : report.files)
    if (!f.ok) std::cout << "invalid\t" << f.utt_id << '\t' << f.message << '\n';
  if (!report.consistent) std::cout << "inconsistent\t" << report.consistency_message << '\n';
  return report.all_ok() ? 0 : kExitIo;
}

int cmd_inspect(const Options& o) {
  resolve(o, "inspect");
  const fs::path path = o.path;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  char magic[4] = {};
  in.read(magic, 4);
  const std::string tag(magic, static_cast<std::size_t>(in.gcount()));
  in.close();

  if (tag == std::string(kLsf1Magic, 4)) {
    const Lsf1Header h = read_lsf1_header(path);
    const auto stack = read_layerstack<float>(path);
    double lo = 0, hi = 0, sum = 0;
    const auto v = stack.features.values();
    if (!v.empty()) lo = hi = v[0];
    for (float x : v) {
      lo = std::min<double>(lo, x);
      hi = std::max<double>(hi, x);
      sum += x;
    }
    std::cout << "kind=lsf1\nversion=" << h.version << "\nchannels=" << h.channels
              << "\nlayers=" << h.layers << "\nframes=" << h.frames
              << "\ndtype=" << static_cast<int>(h.dtype)
              << "\npayload_bytes=" << h.payload_bytes() << "\nmin=" << lo << "\nmax=" << hi
              << "\nmean=" << (v.empty() ? 0.0 : sum / static_cast<double>(v.size())) << '\n';
    return 0;
  }
  if (tag == std::string(kCheckpointMagic, 4)) {
    const Checkpoint c = load_checkpoint(path);
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(c.config_hash));
    std::cout << "kind=checkpoint\nconfig_hash=" << hash << "\nepoch=" << c.epoch
              << "\nstep=" << c.step << "\ntensors=" << c.tensors.size() << '\n';
    std::cout << "# model config\n" << c.config_text;
    for (const auto& t : c.tensors) {
      std::cout << "tensor\t" << t.name << '\t' << (t.dtype == 1 ? "f32" : "f64") << '\t'
                << shape_string(t.shape) << '\n';
    }
    return 0;
  }
  return inspect_manifest(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lapkit: layer attentive pooling speaker-embedding toolkit"};
  app.require_subcommand(1);
  Options o;
  app.add_option("--config", o.config, "flat key = value run configuration");
  app.add_option("--set", o.sets, "override one key (key=value), repeatable")
      ->allow_extra_args(false);
  app.add_option("--seed", o.seed, "shorthand for --set seed=N");
  app.add_option("--out", o.out, "output directory (must exist)");
  app.fallthrough();

  struct Sub {
    const char* name;
    const char* help;
    int (*run)(const Options&);
  };
  const Sub subs[] = {
      {"gen-data", "write a synthetic rotating-layer dataset", cmd_gen_data},
      {"train", "train the backend on train_manifest", cmd_train},
      {"embed", "extract embeddings for manifest", cmd_embed},
      {"score", "score trials from an embedding table", cmd_score},
      {"eval", "embed, score and report eer / min_dcf", cmd_eval},
      {"analyze-layers", "per-layer selection counts of a sigmoid-max model", cmd_analyze_layers},
      {"inspect", "describe an LSF1 file, checkpoint or manifest", cmd_inspect},
  };
  const Sub* chosen = nullptr;
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    if (std::string(s.name) == "score" || std::string(s.name) == "eval")
      sub->add_option("--snorm", o.snorm, "on | off, shorthand for --set snorm=...");
    if (std::string(s.name) == "inspect")
      sub->add_option("path", o.path, "file to describe")->required();
    sub->callback([&chosen, &s] { chosen = &s; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    return chosen->run(o);
  } catch (const NonFiniteLoss& e) {
    std::cerr << "lapkit: " << e.what() << '\n';
    return kExitNonFinite;
  } catch (const IoError& e) {
    std::cerr << "lapkit: " << e.what() << '\n';
    return kExitIo;
  } catch (const StoreError& e) {
    std::cerr << "lapkit: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    std::cerr << "lapkit: " << e.what() << '\n';
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "lapkit: " << e.what() << '\n';
    return kExitIo;
  } catch (const MissingIdError& e) {
    std::cerr << "lapkit: unknown utterance id '" << e.id << "'\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    // ConfigError, UsageError, TrialFormatError, shape and domain errors.
    std::cerr << "lapkit: " << e.what() << '\n';
    return kExitConfig;
  }
}
