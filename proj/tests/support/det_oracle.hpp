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


// Exhaustive threshold enumeration for the detection metrics, and the
// randomized comparison used by the tests and the acceptance gate.

#pragma once

#include <cstdint>
#include <vector>

#include "lap/scoring.hpp"

namespace lap::testing {

/// Every candidate threshold (min - 1, midpoints between distinct scores,
/// max + 1) with miss and false-alarm rates counted from scratch.
struct Enumeration {
  std::vector<double> thresholds;
  std::vector<double> frr;
  std::vector<double> far;
};

Enumeration enumerate_thresholds(const std::vector<double>& scores,
                                 const std::vector<int>& labels);

DetPoint brute_force_eer(const std::vector<double>& scores,
                         const std::vector<int>& labels);
DetPoint brute_force_min_dcf(const std::vector<double>& scores,
                             const std::vector<int>& labels, double p_target);

struct MetricSweep {
  std::size_t sets = 0;
  std::size_t oracle_mismatches = 0;     // eer or min_dcf differs from the oracle
  std::size_t invariance_failures = 0;   // a transformed copy changed a value
  std::size_t max_trials = 0;
};

/// `sets` random labeled score sets of 2..max_trials trials (some with heavy
/// ties), each compared bit-for-bit with the oracle and re-scored under
/// several strictly increasing transforms.
MetricSweep compare_with_oracle(std::size_t sets, std::size_t max_trials,
                                std::uint64_t seed);

}  // namespace lap::testing
