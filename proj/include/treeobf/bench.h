// Copyright 2026 The treeobf Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#ifndef TREEOBF_BENCH_H_
#define TREEOBF_BENCH_H_

#include <cstdint>
#include <string>
#include <vector>

#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/checkins.h"
#include "treeobf/geoind.h"
#include "treeobf/spatial_index.h"
#include "treeobf/synthesis.h"

namespace treeobf {

inline constexpr int kReportSchemaVersion = 1;

// Desk-scale tree: 25-way (5 x 5) branching, two levels, 0.02-unit cells so
// that adjacent leaves are one nat apart at epsilon = 50.
TreeConfig DeskTreeConfig();

// Check-ins spread over leaves with Zipf weights 1 / rank^skew, ranks
// assigned by a seeded shuffle of the leaves. Each point is uniform inside
// its leaf and mapped back to degrees through `mapping`.
std::vector<CheckInRecord> SynthCheckIns(const LocationTree& tree, int64_t n,
                                         uint64_t seed, double skew,
                                         const GeoAffine& mapping = {});

// `count` distinct leaves of the whole tree (with replacement when the tree
// has fewer), lexicographically sorted.
TargetSet RandomTargets(const LocationTree& tree, int count, uint64_t seed);

struct ExperimentReport {
  int experiment = 0;
  std::string name;
  nlohmann::json parameters;
  // One object per grid cell with "status" "ok" or "failed" (+ "reason").
  nlohmann::json cells = nlohmann::json::array();
  // Named boolean trend checks plus supporting numbers.
  nlohmann::json checks = nlohmann::json::object();
  nlohmann::json provenance;

  bool AllChecksPass() const;
  nlohmann::json ToJson() const;
};

nlohmann::json EnvironmentFingerprint();

struct ConvergenceParams {
  CellId subtree;  // empty: first node at level 1
  double epsilon = 50.0;
  std::vector<int> deltas = {3, 5};
  int num_targets = 20;
  uint64_t seed = 1;
  double threshold = 5e-3;
  int max_iterations = 20;
  int iteration_budget = 10;
  RpbMode rpb_mode = RpbMode::kAuto;
};

struct EpsilonSweepParams {
  CellId subtree;
  std::vector<double> epsilons = {50, 55, 60, 65, 70};
  std::vector<int> deltas = {0, 3, 5};
  int num_targets = 49;
  uint64_t seed = 1;
  // Rounds after the feasible solve; the convergence study settles near six.
  int max_iterations = 6;
  double relative_tolerance = 0.01;
  RpbMode rpb_mode = RpbMode::kAuto;
};

struct DeltaSweepParams {
  CellId subtree;
  int max_delta = 5;
  double epsilon = 70.0;
  int repeats = 5;
  int num_targets = 20;
  uint64_t seed = 1;
  int max_iterations = 6;
  double relative_tolerance = 0.01;
  RpbMode rpb_mode = RpbMode::kAuto;
};

struct ViolationParams {
  CellId subtree;
  double epsilon = 70.0;
  // For each cap c: a robust build with delta = c against a non-robust one,
  // pruning r = 0..c random leaves.
  std::vector<int> removed_caps = {5, 7};
  int trials = 20;
  int num_targets = 20;
  uint64_t seed = 1;
  int max_iterations = 6;
  RpbMode rpb_mode = RpbMode::kAuto;
};

absl::StatusOr<ExperimentReport> RunConvergenceExperiment(
    const LocationTree& tree, const ConvergenceParams& params);
absl::StatusOr<ExperimentReport> RunEpsilonSweep(
    const LocationTree& tree, const EpsilonSweepParams& params);
absl::StatusOr<ExperimentReport> RunDeltaSweep(const LocationTree& tree,
                                               const DeltaSweepParams& params);
absl::StatusOr<ExperimentReport> RunViolationExperiment(
    const LocationTree& tree, const ViolationParams& params);

}  // namespace treeobf

#endif  // TREEOBF_BENCH_H_
