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
#include <sstream>

#include "calibration_oracle.hpp"
#include "det_oracle.hpp"
#include "lap/random.hpp"
#include "lap/scoring.hpp"

namespace lap {
namespace {

using V = std::vector<double>;

TEST(Cosine, IdentityOrthogonalAntipodal) {
  const V a{1, 2, 3}, o{3, 0, -1}, neg{-1, -2, -3};
  EXPECT_DOUBLE_EQ(cosine_score(a, a), 1.0);
  EXPECT_DOUBLE_EQ(cosine_score(a, o), 0.0);
  EXPECT_DOUBLE_EQ(cosine_score(a, neg), -1.0);
  EXPECT_THROW(cosine_score(a, V{0, 0, 0}), DomainError);
  EXPECT_THROW(cosine_score(a, V{1, 2}), DimensionError);
}

TEST(SNorm, HandExample) {
  EXPECT_NEAR(snorm(0.5, {0.2, 0.1}, {0.4, 0.2}), 1.75, 1e-12);
}

TEST(SNorm, UnitStatsLeaveScoreUnchanged) {
  EXPECT_DOUBLE_EQ(snorm(0.37, {0.0, 1.0}, {0.0, 1.0}), 0.37);
  EXPECT_THROW(snorm(0.1, {0.0, 0.0}, {0.0, 1.0}), DomainError);
}

Tensor<double> random_rows(std::size_t rows, std::size_t dim, Rng& rng) {
  Tensor<double> t(Shape{rows, dim});
  for (auto& v : t.storage()) v = rng.normal();
  return t;
}

TEST(SNorm, FullCohortMatchesDirectFormula) {
  Rng rng(7);
  const std::size_t rows = 12, dim = 5;
  const auto cohort = random_rows(rows, dim, rng);
  V e(dim), t(dim);
  for (auto& v : e) v = rng.normal();
  for (auto& v : t) v = rng.normal();
  auto stats = [&](const V& probe) {
    V s;
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0, nc = 0, np = 0;
      for (std::size_t j = 0; j < dim; ++j) {
        dot += probe[j] * cohort.at(r, j);
        nc += cohort.at(r, j) * cohort.at(r, j);
        np += probe[j] * probe[j];
      }
      s.push_back(dot / std::sqrt(nc * np));
    }
    double mean = 0, ss = 0;
    for (double x : s) mean += x / rows;
    for (double x : s) ss += (x - mean) * (x - mean);
    return CohortStats{mean, std::sqrt(ss / (rows - 1))};
  };
  const double raw = cosine_score(e, t);
  const CohortStats se = stats(e), st = stats(t);
  const double expect = 0.5 * ((raw - se.mean) / se.std + (raw - st.mean) / st.std);
  EXPECT_NEAR(adaptive_snorm(raw, e, t, cohort, rows), expect, 1e-12);
  EXPECT_THROW(adaptive_snorm(raw, e, t, cohort, rows + 1), std::invalid_argument);
  EXPECT_THROW(adaptive_snorm(raw, e, t, cohort, 1), std::invalid_argument);
}

TEST(SNorm, KeepsTopKOnly) {
  Tensor<double> cohort(Shape{4, 2}, std::vector<double>{1, 0, 0, 1, -1, 0, 0, -1});
  const V probe{1, 0};
  // cosines 1, 0, -1, 0 -> top-2 {1, 0}
  const CohortStats st = cohort_stats(probe, cohort, 2);
  EXPECT_DOUBLE_EQ(st.mean, 0.5);
  EXPECT_NEAR(st.std, std::sqrt(0.5), 1e-15);
}

TEST(Cohort, PerSpeakerUnitMeans) {
  std::vector<SpeakerEmbedding> embs{{"a", 1, {2, 0}}, {"b", 1, {0, 3}}, {"c", 1, {0, 1}}};
  const auto cohort = build_cohort(embs, {"s2", "s1", "s2"});
  ASSERT_EQ(cohort.dim(0), 2u);
  // rows in sorted speaker order: s1, s2
  EXPECT_DOUBLE_EQ(cohort.at(0, 1), 1.0);
  EXPECT_NEAR(cohort.at(1, 0), 2 / std::sqrt(5.0), 1e-15);
  EXPECT_NEAR(cohort.at(1, 1), 1 / std::sqrt(5.0), 1e-15);
}

TEST(Calibration, RecoversPlantedWeights) {
  const auto fit = testing::recover_planted_calibration(200000, 11);
  EXPECT_TRUE(fit.converged);
  for (int k = 0; k < 4; ++k)
    EXPECT_LT(fit.rel_error[k], 0.05) << "w" << k << " planted " << fit.planted[k]
                                      << " recovered " << fit.recovered[k];
}

TEST(Calibration, UninformativeDurationsGetZeroWeight) {
  Rng rng(3);
  std::vector<CalibrationSample> data;
  for (int i = 0; i < 2000; ++i) {
    const int label = i % 2;
    data.push_back({rng.normal() + (label ? 1.0 : -1.0), 300.0, 300.0, label});
  }
  const auto fit = fit_calibration(data);
  EXPECT_TRUE(fit.converged);
  EXPECT_NEAR(fit.model.w2, 0.0, 1e-12);
  EXPECT_NEAR(fit.model.w3, 0.0, 1e-12);
  EXPECT_GT(fit.model.w1, 0.0);
  // A positive-slope affine map keeps the ranking.
  for (std::size_t i = 1; i < data.size(); ++i) {
    const bool raw = data[i].score > data[i - 1].score;
    const bool cal = fit.model.apply(data[i].score, 300, 300) >
                     fit.model.apply(data[i - 1].score, 300, 300);
    EXPECT_EQ(raw, cal);
  }
}

TEST(Calibration, MonotoneCalibrationKeepsEer) {
  Rng rng(5);
  V scores;
  std::vector<int> labels;
  for (int i = 0; i < 300; ++i) {
    labels.push_back(i % 3 == 0);
    scores.push_back(rng.normal() + labels.back());
  }
  const CalibrationModel m{-0.7, 2.5, 0, 0};
  V cal;
  for (double s : scores) cal.push_back(m.apply(s, 100, 400));
  EXPECT_EQ(eer(scores, labels).value, eer(cal, labels).value);
}

TEST(Calibration, RejectsBadInput) {
  EXPECT_THROW(fit_calibration({{0.1, 10, 10, 1}}), std::invalid_argument);
  EXPECT_THROW(fit_calibration({{0.1, 0, 10, 1}, {0.2, 10, 10, 0}}),
               std::invalid_argument);
}

TEST(Eer, HandExamples) {
  EXPECT_DOUBLE_EQ(eer(V{0.9, 0.7, 0.8, 0.6}, std::vector<int>{1, 1, 0, 0}).value, 0.5);
  EXPECT_DOUBLE_EQ(eer(V{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}).value, 0.0);
  EXPECT_DOUBLE_EQ(eer(V{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}).value, 1.0);
  EXPECT_THROW(eer(V{0.1, 0.2}, std::vector<int>{1, 1}), std::invalid_argument);
}

TEST(MinDcf, HandExamples) {
  EXPECT_DOUBLE_EQ(min_dcf(V{0.9, 0.8, 0.2}, std::vector<int>{1, 1, 0}, 0.01).value, 0.0);
  EXPECT_DOUBLE_EQ(min_dcf(V{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}, 0.05).value,
                   1.0);
  EXPECT_THROW(min_dcf(V{0.1, 0.2}, std::vector<int>{1, 0}, 0.0), std::invalid_argument);
}

TEST(DetMetrics, MatchBruteForceOnSmallSet) {
  const auto sweep = testing::compare_with_oracle(50, 50, 1);
  EXPECT_EQ(sweep.oracle_mismatches, 0u);
  EXPECT_EQ(sweep.invariance_failures, 0u);
}

TEST(DetMetrics, MatchBruteForceOnTwoHundredSets) {
  const auto sweep = testing::compare_with_oracle(200, 1000, 2);
  EXPECT_EQ(sweep.oracle_mismatches, 0u);
  EXPECT_EQ(sweep.invariance_failures, 0u);
  EXPECT_LE(sweep.max_trials, 1000u);
}

TEST(Trials, ParsesLabeledAndUnlabeled) {
  std::istringstream one("1 a b\n");
  auto t = parse_trials(one);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].label, 1);
  std::istringstream two("0 a c\n1 a b\n");
  t = parse_trials(two);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_EQ(t[0].test, "c");
  EXPECT_EQ(t[1].label, 1);
  std::istringstream bare("a b\n");
  EXPECT_EQ(parse_trials(bare)[0].label, -1);
}

TEST(Trials, RejectsMixedLines) {
  std::istringstream mixed("1 a b\na c\n0 b c\n");
  try {
    parse_trials(mixed);
    FAIL() << "mixed trials accepted";
  } catch (const TrialFormatError& e) {
    EXPECT_EQ(e.line, 2u);
  }
  std::istringstream bad_label("2 a b\n");
  EXPECT_THROW(parse_trials(bad_label), TrialFormatError);
}

EmbeddingTable small_table() {
  return EmbeddingTable({{"a", 100, {1, 0}}, {"b", 200, {1, 1}}, {"c", 50, {0, 1}}});
}

TEST(ScoreTrials, PlainCosineByDefault) {
  const auto table = small_table();
  const std::vector<Trial> trials{{"a", "b", 1}, {"a", "c", 0}};
  const auto s = score_trials(trials, table);
  EXPECT_NEAR(s[0], 1 / std::sqrt(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(s[1], 0.0);
  EXPECT_THROW(score_trials({{"a", "zz", 1}}, table), MissingIdError);
}

TEST(ScoreTrials, CalibrationIsApplied) {
  const auto table = small_table();
  ScoreOptions opt;
  opt.calibration = CalibrationModel{1.0, 2.0, 0.5, -0.5};
  const auto s = score_trials({{"a", "b", 1}}, table, opt);
  EXPECT_NEAR(s[0], opt.calibration->apply(1 / std::sqrt(2.0), 100, 200), 1e-15);
}

TEST(ScoreTrials, ScoresRoundTripThroughTsv) {
  const auto table = small_table();
  const std::vector<Trial> trials{{"a", "b", 1}, {"b", "c", 0}, {"c", "a", 0}};
  const auto s = score_trials(trials, table);
  std::stringstream io;
  write_scores_tsv(io, trials, s);
  const auto [back_trials, back] = read_scores_tsv(io);
  ASSERT_EQ(back.size(), s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    EXPECT_EQ(back[i], s[i]);
    EXPECT_EQ(back_trials[i].enroll, trials[i].enroll);
  }
}

TEST(SamplePairs, AlternatesTargetAndNontarget) {
  const std::vector<std::string> spk{"x", "x", "y", "y", "z", "z"};
  const auto pairs = sample_pairs(spk, 40, 9);
  ASSERT_EQ(pairs.size(), 40u);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_NE(pairs[i].first, pairs[i].second);
    EXPECT_EQ(spk[pairs[i].first] == spk[pairs[i].second], i % 2 == 0) << i;
  }
  EXPECT_EQ(pairs, sample_pairs(spk, 40, 9));
}

TEST(Summary, WritesAllKeys) {
  const V s{0.9, 0.7, 0.8, 0.6};
  const std::vector<int> l{1, 1, 0, 0};
  std::ostringstream os;
  write_metrics(os, summarize(s, l));
  for (const char* key : {"eer=", "dcf_p01=", "dcf_p05=", "targets=2", "nontargets=2"})
    EXPECT_NE(os.str().find(key), std::string::npos) << key;
}

}  // namespace
}  // namespace lap
