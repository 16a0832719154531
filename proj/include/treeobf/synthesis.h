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
#ifndef TREEOBF_SYNTHESIS_H_
#define TREEOBF_SYNTHESIS_H_

#include <span>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/geoind.h"
#include "treeobf/lp.h"
#include "treeobf/spatial_index.h"

namespace treeobf {

// Largest subtree the LP builders accept.
inline constexpr int kMaxSubtreeSize = 40;
// Exhaustive reserved-budget enumeration limits.
inline constexpr int kMaxExactDelta = 5;
inline constexpr int kMaxExactSize = 25;

enum class RpbMode {
  kExact,
  kApproximate,
  // Exact within kMaxExactDelta / kMaxExactSize, approximate beyond.
  kAuto,
};

absl::StatusOr<RpbMode> ParseRpbMode(std::string_view name);
const char* RpbModeName(RpbMode mode);

struct SynthesisConfig {
  double epsilon = 50.0;  // per unit distance; +inf disables the constraints
  int delta = 0;
  TargetSet targets;
  double convergence_threshold = 5e-3;
  int max_iterations = 20;
  RpbMode rpb_mode = RpbMode::kAuto;
  SolverOptions solver;

  absl::Status Validate() const;
  nlohmann::json ToJson() const;
};

// Reserved budgets eps_ij per ordered pair, row-major, zero diagonal.
struct RpbTable {
  int size = 0;
  std::vector<double> values;

  static RpbTable Zeros(int size);
  double at(int i, int j) const { return values[i * size + j]; }
  double max() const;
};

// eps_ij = ln(max_S (1 - sum_S z_j) / (1 - sum_S z_i)) / d_ij over every
// column set S with |S| <= delta.
absl::StatusOr<RpbTable> ComputeRpbExact(const ObfuscationMatrix& z,
                                         const DistanceTable& d, int delta);

// Closed-form upper bound on the exact budget,
//   eps'_ij = ln((1 - M_i e^{-eps d_ij}) / (1 - M_i)) / d_ij,
// with M_i the sum of the delta largest entries of row i. Requires z to be
// epsilon-Geo-Ind.
absl::StatusOr<RpbTable> ComputeRpbApprox(const ObfuscationMatrix& z,
                                          const DistanceTable& d, int delta,
                                          double epsilon);

// Variables z_kl at index k * K + l, bounded to [0, 1]. One equality per
// row and one inequality per ordered pair and column. The objective is the
// expected loss.
absl::StatusOr<LinearProgram> BuildFeasibleLp(std::span<const CellId> leaves,
                                              const LocationTree& tree,
                                              std::span<const double> priors,
                                              const SynthesisConfig& config);

// As BuildFeasibleLp with the exponent of pair (j, k) reduced to
// (epsilon - eps_jk) * d_jk. Fails if any eps_jk >= epsilon.
absl::StatusOr<LinearProgram> BuildRobustLp(std::span<const CellId> leaves,
                                            const LocationTree& tree,
                                            std::span<const double> priors,
                                            const SynthesisConfig& config,
                                            const RpbTable& rpb);

struct SynthesisResult {
  ObfuscationMatrix matrix;
  // Number of re-solves after the initial feasible solve.
  int iterations = 0;
  std::vector<double> divergence_trace;
  // LP objective per solve, starting with the feasible one.
  std::vector<double> objective_trace;
  bool converged = false;
  RpbMode rpb_mode = RpbMode::kExact;
  // Budgets used for the final solve.
  RpbTable rpb;
  // Geo-Ind audit of the final matrix, and the exhaustive delta audit when
  // it is cheap enough to run (-1 otherwise).
  int geo_ind_violations = 0;
  int delta_violations = -1;

  nlohmann::json Manifest(const SynthesisConfig& config) const;
};

// Solves the feasible program, then alternates reserved-budget computation
// on the previous iterate with a robust re-solve until the mean absolute
// entrywise change drops below the convergence threshold or the iteration
// budget runs out.
absl::StatusOr<SynthesisResult> GenerateRobustMatrix(
    std::span<const CellId> leaves, const LocationTree& tree,
    std::span<const double> priors, const SynthesisConfig& config);

// Mean absolute entrywise difference of two same-shape matrices.
double MeanAbsoluteDifference(const ObfuscationMatrix& a,
                              const ObfuscationMatrix& b);

}  // namespace treeobf

#endif  // TREEOBF_SYNTHESIS_H_
