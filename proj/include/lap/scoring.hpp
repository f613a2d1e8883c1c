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

// Verification scoring: cosine, adaptive s-norm, quality-aware calibration,
// and the EER / minDCF detection metrics.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "lap/embedder.hpp"
#include "lap/tensor.hpp"

namespace lap {

/// <a, b> / (|a| |b|). Zero vectors raise DomainError.
double cosine_score(std::span<const double> a, std::span<const double> b);

struct CohortStats {
  double mean = 0;
  double std = 0;  // sample standard deviation
};

/// Unit-normalized per-speaker means, rows in the order of `speakers`
/// (sorted ids), [S x E].
Tensor<double> build_cohort(const std::vector<SpeakerEmbedding>& embeddings,
                            const std::vector<std::string>& speaker_of);

/// Mean and std of the k highest cosine scores of `probe` against the rows
/// of `cohort`. Requires rows >= k >= 2.
CohortStats cohort_stats(std::span<const double> probe, const Tensor<double>& cohort,
                         std::size_t k);

/// 0.5 * ((s - mu_e) / sigma_e + (s - mu_t) / sigma_t). A zero sigma raises
/// DomainError naming the side.
double snorm(double score, const CohortStats& enroll, const CohortStats& test);

double adaptive_snorm(double score, std::span<const double> enroll,
                      std::span<const double> test, const Tensor<double>& cohort,
                      std::size_t k);

/// Logistic model on [score, log T_enroll, log T_test]; apply() returns the
/// logit w0 + w1*s + w2*log T_e + w3*log T_t.
struct CalibrationModel {
  double w0 = 0, w1 = 1, w2 = 0, w3 = 0;

  double apply(double score, double frames_enroll, double frames_test) const;
};

struct CalibrationFit {
  CalibrationModel model;
  std::size_t iterations = 0;
  bool converged = false;  // false: iteration cap hit (e.g. separable data)
};

struct CalibrationSample {
  double score;
  double frames_enroll;
  double frames_test;
  int label;  // 1 target, 0 nontarget
};

/// Newton iterations on the mean log-likelihood until the gradient's
/// infinity norm drops below 1e-8, at most 200 iterations.
CalibrationFit fit_calibration(const std::vector<CalibrationSample>& samples);

struct DetPoint {
  double value = 0;
  double threshold = 0;
};

/// Thresholds are min - 1, the midpoints between consecutive distinct
/// scores, and max + 1; a trial is accepted when score > threshold. The EER
/// is read where FRR = FAR, interpolating linearly between the two adjacent
/// operating points when they straddle the crossing. Labels: 1 target,
/// 0 nontarget. Single-class input raises std::invalid_argument.
DetPoint eer(std::span<const double> scores, std::span<const int> labels);

/// min over the same thresholds of c_miss*P*P_miss + c_fa*(1-P)*P_fa, divided
/// by min(c_miss*P, c_fa*(1-P)).
DetPoint min_dcf(std::span<const double> scores, std::span<const int> labels,
                 double p_target, double c_fa = 1.0, double c_miss = 1.0);

struct Trial {
  std::string enroll;
  std::string test;
  int label = -1;  // -1 when unlabeled
};

class TrialFormatError : public std::runtime_error {
 public:
  TrialFormatError(std::size_t line, const std::string& why);
  std::size_t line;
};

/// Lines `label enroll test` or `enroll test`; all lines must agree.
std::vector<Trial> parse_trials(std::istream& is);

class MissingIdError : public std::out_of_range {
 public:
  explicit MissingIdError(const std::string& id);
  std::string id;
};

class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::vector<SpeakerEmbedding> embeddings);

  const SpeakerEmbedding& at(const std::string& id) const;
  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  const std::vector<SpeakerEmbedding>& entries() const { return entries_; }

 private:
  std::vector<SpeakerEmbedding> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ScoreOptions {
  const Tensor<double>* cohort = nullptr;  // s-norm when set
  std::size_t k_adapt = 100;
  std::optional<CalibrationModel> calibration;
};

/// Cosine, then optional s-norm, then optional calibration; one score per
/// trial in input order.
std::vector<double> score_trials(const std::vector<Trial>& trials,
                                 const EmbeddingTable& table,
                                 const ScoreOptions& options = {});

/// Index pairs into `speaker_of`, alternating same-speaker and
/// different-speaker draws.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(
    const std::vector<std::string>& speaker_of, std::size_t count,
    std::uint64_t seed);

void write_scores_tsv(std::ostream& os, const std::vector<Trial>& trials,
                      const std::vector<double>& scores);
/// Returns (trials without labels, scores).
std::pair<std::vector<Trial>, std::vector<double>> read_scores_tsv(std::istream& is);

struct DetSummary {
  DetPoint eer;
  DetPoint dcf_p01;
  DetPoint dcf_p05;
  std::size_t targets = 0;
  std::size_t nontargets = 0;
};

DetSummary summarize(std::span<const double> scores, std::span<const int> labels);
/// key=value lines: eer, eer_threshold, dcf_p01, dcf_p01_threshold, dcf_p05,
/// dcf_p05_threshold, targets, nontargets.
void write_metrics(std::ostream& os, const DetSummary& summary);

}  // namespace lap
