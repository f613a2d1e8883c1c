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

#include "lap/scoring.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "lap/random.hpp"

namespace lap {

double cosine_score(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("cosine_score: sizes " + std::to_string(a.size()) + " and " +
                         std::to_string(b.size()));
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) throw DomainError("cosine_score: zero embedding");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Tensor<double> build_cohort(const std::vector<SpeakerEmbedding>& embeddings,
                            const std::vector<std::string>& speaker_of) {
  if (embeddings.size() != speaker_of.size() || embeddings.empty())
    throw std::invalid_argument("cohort needs one speaker id per embedding");
  const std::size_t dim = embeddings.front().values.size();
  std::map<std::string, std::vector<double>> sums;
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    const auto& v = embeddings[i].values;
    if (v.size() != dim) throw DimensionError("cohort embeddings differ in size");
    auto& acc = sums[speaker_of[i]];
    acc.resize(dim, 0.0);
    for (std::size_t j = 0; j < dim; ++j) acc[j] += v[j];
  }
  Tensor<double> cohort(Shape{sums.size(), dim});
  std::size_t row = 0;
  for (const auto& [id, acc] : sums) {
    double norm = 0;
    for (double x : acc) norm += x * x;
    if (norm == 0) throw DomainError("cohort speaker " + id + " has a zero mean");
    norm = std::sqrt(norm);
    for (std::size_t j = 0; j < dim; ++j) cohort.at(row, j) = acc[j] / norm;
    ++row;
  }
  return cohort;
}

CohortStats cohort_stats(std::span<const double> probe, const Tensor<double>& cohort,
                         std::size_t k) {
  const std::size_t rows = cohort.dim(0), dim = cohort.dim(1);
  if (k < 2 || k > rows)
    throw std::invalid_argument("adaptive s-norm needs cohort size (" +
                                std::to_string(rows) + ") >= k (" + std::to_string(k) +
                                ") >= 2");
  std::vector<double> scores(rows);
  for (std::size_t r = 0; r < rows; ++r)
    scores[r] = cosine_score(probe, std::span<const double>(cohort.data() + r * dim, dim));
  std::partial_sort(scores.begin(), scores.begin() + k, scores.end(),
                    std::greater<double>());
  CohortStats st;
  for (std::size_t i = 0; i < k; ++i) st.mean += scores[i];
  st.mean /= static_cast<double>(k);
  double ss = 0;
  for (std::size_t i = 0; i < k; ++i) ss += (scores[i] - st.mean) * (scores[i] - st.mean);
  st.std = std::sqrt(ss / static_cast<double>(k - 1));
  return st;
}

double snorm(double score, const CohortStats& e, const CohortStats& t) {
  if (!(e.std > 0)) throw DomainError("s-norm: enroll-side cohort std is zero");
  if (!(t.std > 0)) throw DomainError("s-norm: test-side cohort std is zero");
  return 0.5 * ((score - e.mean) / e.std + (score - t.mean) / t.std);
}

double adaptive_snorm(double score, std::span<const double> enroll,
                      std::span<const double> test, const Tensor<double>& cohort,
                      std::size_t k) {
  return snorm(score, cohort_stats(enroll, cohort, k), cohort_stats(test, cohort, k));
}

double CalibrationModel::apply(double s, double te, double tt) const {
  return w0 + w1 * s + w2 * std::log(te) + w3 * std::log(tt);
}

CalibrationFit fit_calibration(const std::vector<CalibrationSample>& samples) {
  bool has_target = false, has_nontarget = false;
  for (const auto& s : samples) {
    if (s.label != 0 && s.label != 1)
      throw std::invalid_argument("calibration labels must be 0 or 1");
    if (!(s.frames_enroll > 0) || !(s.frames_test > 0))
      throw std::invalid_argument("calibration frame counts must be positive");
    (s.label ? has_target : has_nontarget) = true;
  }
  if (!has_target || !has_nontarget)
    throw std::invalid_argument("calibration needs both target and nontarget pairs");

  // Duration features are centered so that constant features stay at zero.
  const double n = static_cast<double>(samples.size());
  double mu_e = 0, mu_t = 0;
  for (const auto& s : samples) {
    mu_e += std::log(s.frames_enroll);
    mu_t += std::log(s.frames_test);
  }
  mu_e /= n;
  mu_t /= n;
  std::vector<Eigen::Vector4d> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples)
    xs.emplace_back(1.0, s.score, std::log(s.frames_enroll) - mu_e,
                    std::log(s.frames_test) - mu_t);

  constexpr double ridge = 1e-10;
  const auto objective = [&](const Eigen::Vector4d& w) {
    double ll = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double z = w.dot(xs[i]);
      // log sigmoid(z) and log(1 - sigmoid(z)), stable for large |z|
      const double log_p = -std::log1p(std::exp(-std::abs(z))) + std::min(z, 0.0);
      const double log_q = log_p - z;
      ll += samples[i].label ? log_p : log_q;
    }
    return ll / n - 0.5 * ridge * w.squaredNorm();
  };

  Eigen::Vector4d w = Eigen::Vector4d::Zero();
  CalibrationFit fit;
  double current = objective(w);
  for (std::size_t it = 0; it < 200; ++it) {
    Eigen::Vector4d g = -ridge * w;
    Eigen::Matrix4d h = -ridge * Eigen::Matrix4d::Identity();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double p = 1.0 / (1.0 + std::exp(-w.dot(xs[i])));
      g += (samples[i].label - p) / n * xs[i];
      h -= p * (1 - p) / n * xs[i] * xs[i].transpose();
    }
    fit.iterations = it;
    if (g.lpNorm<Eigen::Infinity>() < 1e-8) {
      fit.converged = true;
      break;
    }
    const Eigen::Vector4d step = h.ldlt().solve(-g);
    double t = 1.0;
    Eigen::Vector4d next = w + step;
    double value = objective(next);
    while (value < current && t > 1e-10) {
      t *= 0.5;
      next = w + t * step;
      value = objective(next);
    }
    w = next;
    current = value;
    fit.iterations = it + 1;
  }
  fit.model.w1 = w[1];
  fit.model.w2 = w[2];
  fit.model.w3 = w[3];
  fit.model.w0 = w[0] - w[2] * mu_e - w[3] * mu_t;
  return fit;
}

namespace {

struct Sweep {
  std::vector<double> thresholds;
  std::vector<double> frr;
  std::vector<double> far;
};

Sweep sweep(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("scores and labels differ in length");
  std::vector<std::pair<double, int>> s;
  s.reserve(scores.size());
  std::size_t nt = 0, nn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1)
      throw std::invalid_argument("labels must be 0 or 1");
    if (!std::isfinite(scores[i])) throw DomainError("non-finite score");
    s.emplace_back(scores[i], labels[i]);
    (labels[i] ? nt : nn) += 1;
  }
  if (!nt || !nn)
    throw std::invalid_argument("detection metrics need targets and nontargets");
  std::sort(s.begin(), s.end());

  Sweep out;
  std::size_t miss = 0, fa = nn;  // threshold below every score
  const auto push = [&](double thr) {
    out.thresholds.push_back(thr);
    out.frr.push_back(static_cast<double>(miss) / static_cast<double>(nt));
    out.far.push_back(static_cast<double>(fa) / static_cast<double>(nn));
  };
  push(s.front().first - 1.0);
  for (std::size_t i = 0; i < s.size();) {
    std::size_t j = i;
    while (j < s.size() && s[j].first == s[i].first) {
      if (s[j].second)
        ++miss;
      else
        --fa;
      ++j;
    }
    push(j < s.size() ? 0.5 * (s[i].first + s[j].first) : s.back().first + 1.0);
    i = j;
  }
  return out;
}

}  // namespace

DetPoint eer(std::span<const double> scores, std::span<const int> labels) {
  const Sweep sw = sweep(scores, labels);
  for (std::size_t i = 1; i < sw.thresholds.size(); ++i) {
    const double d = sw.frr[i] - sw.far[i];
    if (d < 0) continue;
    if (d == 0) return {sw.frr[i], sw.thresholds[i]};
    const double d0 = sw.frr[i - 1] - sw.far[i - 1];
    const double t = d0 / (d0 - d);
    return {sw.frr[i - 1] + t * (sw.frr[i] - sw.frr[i - 1]),
            sw.thresholds[i - 1] + t * (sw.thresholds[i] - sw.thresholds[i - 1])};
  }
  return {sw.frr.back(), sw.thresholds.back()};
}

DetPoint min_dcf(std::span<const double> scores, std::span<const int> labels,
                 double p_target, double c_fa, double c_miss) {
  if (!(p_target > 0 && p_target < 1) || !(c_fa > 0) || !(c_miss > 0))
    throw std::invalid_argument("min_dcf needs 0 < p_target < 1 and positive costs");
  const Sweep sw = sweep(scores, labels);
  const double norm = std::min(c_miss * p_target, c_fa * (1 - p_target));
  DetPoint best{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t i = 0; i < sw.thresholds.size(); ++i) {
    const double cost =
        (c_miss * p_target * sw.frr[i] + c_fa * (1 - p_target) * sw.far[i]) / norm;
    if (cost < best.value) best = {cost, sw.thresholds[i]};
  }
  return best;
}

TrialFormatError::TrialFormatError(std::size_t l, const std::string& why)
    : std::runtime_error("trials line " + std::to_string(l) + ": " + why), line(l) {}

std::vector<Trial> parse_trials(std::istream& is) {
  std::vector<Trial> out;
  std::string line;
  std::size_t line_no = 0;
  int labeled = -1;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    Trial tr;
    int this_labeled = 0;
    if (tok.size() == 3) {
      if (tok[0] != "0" && tok[0] != "1")
        throw TrialFormatError(line_no, "label must be 0 or 1, got '" + tok[0] + "'");
      tr.label = tok[0] == "1";
      tr.enroll = tok[1];
      tr.test = tok[2];
      this_labeled = 1;
    } else if (tok.size() == 2) {
      tr.enroll = tok[0];
      tr.test = tok[1];
    } else {
      throw TrialFormatError(line_no, "expected 'label enroll test' or 'enroll test'");
    }
    if (labeled >= 0 && labeled != this_labeled)
      throw TrialFormatError(line_no, "mixes labeled and unlabeled trials");
    labeled = this_labeled;
    out.push_back(std::move(tr));
  }
  return out;
}

MissingIdError::MissingIdError(const std::string& i)
    : std::out_of_range("no embedding for utterance '" + i + "'"), id(i) {}

EmbeddingTable::EmbeddingTable(std::vector<SpeakerEmbedding> embeddings)
    : entries_(std::move(embeddings)) {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (!index_.emplace(entries_[i].utt_id, i).second)
      throw std::invalid_argument("duplicate embedding id '" + entries_[i].utt_id + "'");
}

const SpeakerEmbedding& EmbeddingTable::at(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw MissingIdError(id);
  return entries_[it->second];
}

std::vector<double> score_trials(const std::vector<Trial>& trials,
                                 const EmbeddingTable& table,
                                 const ScoreOptions& options) {
  for (const auto& t : trials) {
    table.at(t.enroll);
    table.at(t.test);
  }
  // Cohort statistics once per distinct utterance.
  std::unordered_map<std::string, std::size_t> stat_slot;
  std::vector<const SpeakerEmbedding*> probes;
  if (options.cohort) {
    for (const auto& t : trials)
      for (const auto* id : {&t.enroll, &t.test})
        if (stat_slot.emplace(*id, probes.size()).second) probes.push_back(&table.at(*id));
  }
  if (options.cohort && (options.k_adapt < 2 || options.k_adapt > options.cohort->dim(0)))
    throw std::invalid_argument("adaptive s-norm needs cohort size (" +
                                std::to_string(options.cohort->dim(0)) + ") >= k (" +
                                std::to_string(options.k_adapt) + ") >= 2");
  std::vector<CohortStats> stats(probes.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(probes.size()); ++i)
    stats[i] = cohort_stats(probes[i]->values, *options.cohort, options.k_adapt);

  std::vector<double> out(trials.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(trials.size()); ++i) {
    const auto& t = trials[i];
    const auto& e = table.at(t.enroll);
    const auto& v = table.at(t.test);
    double s = cosine_score(e.values, v.values);
    if (options.cohort)
      s = snorm(s, stats[stat_slot.at(t.enroll)], stats[stat_slot.at(t.test)]);
    if (options.calibration)
      s = options.calibration->apply(s, static_cast<double>(e.num_frames),
                                     static_cast<double>(v.num_frames));
    out[i] = s;
  }
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(
    const std::vector<std::string>& speaker_of, std::size_t count, std::uint64_t seed) {
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < speaker_of.size(); ++i) by_speaker[speaker_of[i]].push_back(i);
  std::vector<const std::vector<std::size_t>*> multi;
  for (const auto& [id, utts] : by_speaker)
    if (utts.size() >= 2) multi.push_back(&utts);
  if (multi.empty() || by_speaker.size() < 2)
    throw std::invalid_argument(
        "pair sampling needs two speakers and one speaker with two utterances");
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(count);
  while (out.size() < count) {
    if (out.size() % 2 == 0) {
      const auto& utts = *multi[rng.below(multi.size())];
      const auto a = rng.below(utts.size());
      auto b = rng.below(utts.size() - 1);
      if (b >= a) ++b;
      out.emplace_back(utts[a], utts[b]);
    } else {
      const auto a = rng.below(speaker_of.size());
      const auto b = rng.below(speaker_of.size());
      if (speaker_of[a] != speaker_of[b]) out.emplace_back(a, b);
    }
  }
  return out;
}

void write_scores_tsv(std::ostream& os, const std::vector<Trial>& trials,
                      const std::vector<double>& scores) {
  if (trials.size() != scores.size())
    throw std::invalid_argument("one score per trial required");
  char buf[40];
  for (std::size_t i = 0; i < trials.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", scores[i]);
    os << trials[i].enroll << '\t' << trials[i].test << '\t' << buf << '\n';
  }
}

std::pair<std::vector<Trial>, std::vector<double>> read_scores_tsv(std::istream& is) {
  std::pair<std::vector<Trial>, std::vector<double>> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw TrialFormatError(line_no, "expected enroll<TAB>test<TAB>score");
    double v = 0;
    const char* b = line.data() + t2 + 1;
    const char* e = line.data() + line.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) throw TrialFormatError(line_no, "bad score");
    out.first.push_back({line.substr(0, t1), line.substr(t1 + 1, t2 - t1 - 1), -1});
    out.second.push_back(v);
  }
  return out;
}

DetSummary summarize(std::span<const double> scores, std::span<const int> labels) {
  DetSummary s;
  s.eer = eer(scores, labels);
  s.dcf_p01 = min_dcf(scores, labels, 0.01);
  s.dcf_p05 = min_dcf(scores, labels, 0.05);
  for (int l : labels) (l ? s.targets : s.nontargets) += 1;
  return s;
}

void write_metrics(std::ostream& os, const DetSummary& s) {
  char buf[64];
  const auto line = [&](const char* key, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << key << '=' << buf << '\n';
  };
  line("eer", s.eer.value);
  line("eer_threshold", s.eer.threshold);
  line("dcf_p01", s.dcf_p01.value);
  line("dcf_p01_threshold", s.dcf_p01.threshold);
  line("dcf_p05", s.dcf_p05.value);
  line("dcf_p05_threshold", s.dcf_p05.threshold);
  os << "targets=" << s.targets << '\n' << "nontargets=" << s.nontargets << '\n';
}

}  // namespace lap
