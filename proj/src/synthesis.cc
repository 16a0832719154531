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
#include "treeobf/synthesis.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "absl/strings/str_join.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

constexpr double kFullMass = 1.0 - 1e-12;
// Work cap, in triple checks, for the manifest's exhaustive delta audit.
constexpr double kDeltaAuditBudget = 2e8;

double SubsetCount(int n, int max_size) {
  double total = 0.0;
  double term = 1.0;
  for (int s = 0; s <= std::min(n, max_size); ++s) {
    total += term;
    term = term * (n - s) / (s + 1);
  }
  return total;
}

absl::Status CheckRpbShape(const ObfuscationMatrix& z, const DistanceTable& d,
                           int delta) {
  if (d.size() != z.size()) {
    return absl::InvalidArgumentError("distance table does not match matrix");
  }
  if (delta < 0 || delta >= std::max(z.size(), 1)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("delta %d must lie in [0, %d)", delta, z.size()));
  }
  return absl::OkStatus();
}

double BudgetFromRatio(double ratio, double distance) {
  if (ratio <= 1.0) return 0.0;
  if (distance <= 0.0) return std::numeric_limits<double>::infinity();
  return std::log(ratio) / distance;
}

absl::StatusOr<ObfuscationMatrix> MatrixFromSolution(
    std::span<const CellId> leaves, const std::vector<double>& x) {
  const size_t k = leaves.size();
  std::vector<std::vector<double>> rows(k, std::vector<double>(k));
  for (size_t i = 0; i < k; ++i) {
    for (size_t j = 0; j < k; ++j) {
      rows[i][j] = std::max(0.0, x[i * k + j]);  // clear solver round-off
    }
  }
  return ObfuscationMatrix::Create(
      0, std::vector<CellId>(leaves.begin(), leaves.end()), std::move(rows));
}

absl::StatusOr<ObfuscationMatrix> SolveToMatrix(const LinearProgram& lp,
                                                std::span<const CellId> leaves,
                                                const SolverOptions& options,
                                                int round, double* objective) {
  absl::StatusOr<LpSolution> solution = Solve(lp, options);
  if (!solution.ok()) return solution.status();
  if (solution->status != LpStatus::kOptimal) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "round %d: linear program %s (%s)", round,
        LpStatusName(solution->status), solution->diagnostics));
  }
  *objective = solution->objective_value;
  return MatrixFromSolution(leaves, solution->x);
}

}  // namespace

absl::StatusOr<RpbMode> ParseRpbMode(std::string_view name) {
  if (name == "exact") return RpbMode::kExact;
  if (name == "approximate") return RpbMode::kApproximate;
  if (name == "auto") return RpbMode::kAuto;
  return absl::InvalidArgumentError(
      absl::StrCat("unknown reserved-budget mode '", std::string(name), "'"));
}

const char* RpbModeName(RpbMode mode) {
  switch (mode) {
    case RpbMode::kExact:
      return "exact";
    case RpbMode::kApproximate:
      return "approximate";
    case RpbMode::kAuto:
      return "auto";
  }
  return "unknown";
}

absl::Status SynthesisConfig::Validate() const {
  if (!(epsilon > 0.0)) {
    return absl::InvalidArgumentError("epsilon must be positive");
  }
  if (delta < 0) return absl::InvalidArgumentError("delta must be >= 0");
  if (!(convergence_threshold > 0.0)) {
    return absl::InvalidArgumentError("convergence threshold must be positive");
  }
  if (max_iterations < 1) {
    return absl::InvalidArgumentError("max_iterations must be >= 1");
  }
  return absl::OkStatus();
}

json SynthesisConfig::ToJson() const {
  json targets_json = json::array();
  for (const CellId& t : targets.targets) targets_json.push_back(t.str());
  return {{"epsilon", epsilon},
          {"delta", delta},
          {"targets", targets_json},
          {"convergence_threshold", convergence_threshold},
          {"max_iterations", max_iterations},
          {"rpb_mode", RpbModeName(rpb_mode)}};
}

RpbTable RpbTable::Zeros(int size) {
  return {size, std::vector<double>(static_cast<size_t>(size) * size, 0.0)};
}

double RpbTable::max() const {
  double worst = 0.0;
  for (double v : values) worst = std::max(worst, v);
  return worst;
}

absl::StatusOr<RpbTable> ComputeRpbExact(const ObfuscationMatrix& z,
                                         const DistanceTable& d, int delta) {
  if (auto s = CheckRpbShape(z, d, delta); !s.ok()) return s;
  const int k = z.size();
  if (delta > kMaxExactDelta || k > kMaxExactSize) {
    return absl::ResourceExhaustedError(absl::StrFormat(
        "exact reserved budget limited to delta <= %d and K <= %d "
        "(got %d, %d); use the approximate mode",
        kMaxExactDelta, kMaxExactSize, delta, k));
  }
  std::vector<double> best(static_cast<size_t>(k) * k, 1.0);
  std::vector<double> mass(k);
  absl::Status status;
  ForEachSubset(k, delta, [&](std::span<const int> subset) {
    if (!status.ok()) return;
    for (int i = 0; i < k; ++i) {
      mass[i] = 0.0;
      for (int s : subset) mass[i] += z.at(i, s);
      if (mass[i] >= kFullMass) {
        status = absl::FailedPreconditionError(absl::StrFormat(
            "unboundable reserved budget: row %d loses all mass under "
            "S = {%s}",
            i, absl::StrJoin(subset, ",")));
        return;
      }
    }
    for (int i = 0; i < k; ++i) {
      for (int j = 0; j < k; ++j) {
        if (i == j) continue;
        const double ratio = (1.0 - mass[j]) / (1.0 - mass[i]);
        double& b = best[i * k + j];
        if (ratio > b) b = ratio;
      }
    }
  });
  if (!status.ok()) return status;
  RpbTable table = RpbTable::Zeros(k);
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i != j) table.values[i * k + j] = BudgetFromRatio(best[i * k + j], d.at(i, j));
    }
  }
  return table;
}

absl::StatusOr<RpbTable> ComputeRpbApprox(const ObfuscationMatrix& z,
                                          const DistanceTable& d, int delta,
                                          double epsilon) {
  if (auto s = CheckRpbShape(z, d, delta); !s.ok()) return s;
  if (const GeoIndReport audit = AuditGeoInd(z, d, epsilon);
      audit.count() > 0) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "approximate reserved budget needs an epsilon-Geo-Ind matrix; "
        "found %d violations (max slack %g)",
        audit.count(), audit.max_slack()));
  }
  const int k = z.size();
  RpbTable table = RpbTable::Zeros(k);
  for (int i = 0; i < k; ++i) {
    std::vector<double> row(z.row(i).begin(), z.row(i).end());
    std::partial_sort(row.begin(), row.begin() + delta, row.end(),
                      std::greater<>());
    double top = 0.0;
    for (int s = 0; s < delta; ++s) top += row[s];
    if (top >= kFullMass) {
      return absl::FailedPreconditionError(absl::StrFormat(
          "unboundable reserved budget: the %d largest entries of row %d "
          "carry all of its mass",
          delta, i));
    }
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      const double shrink = std::exp(-epsilon * d.at(i, j));
      table.values[i * k + j] =
          BudgetFromRatio((1.0 - top * shrink) / (1.0 - top), d.at(i, j));
    }
  }
  return table;
}

absl::StatusOr<LinearProgram> BuildFeasibleLp(std::span<const CellId> leaves,
                                              const LocationTree& tree,
                                              std::span<const double> priors,
                                              const SynthesisConfig& config) {
  return BuildRobustLp(leaves, tree, priors, config,
                       RpbTable::Zeros(static_cast<int>(leaves.size())));
}

absl::StatusOr<LinearProgram> BuildRobustLp(std::span<const CellId> leaves,
                                            const LocationTree& tree,
                                            std::span<const double> priors,
                                            const SynthesisConfig& config,
                                            const RpbTable& rpb) {
  if (auto s = config.Validate(); !s.ok()) return s;
  const int k = static_cast<int>(leaves.size());
  if (k < 2) {
    return absl::InvalidArgumentError("a subtree needs at least two leaves");
  }
  if (k > kMaxSubtreeSize) {
    return absl::ResourceExhaustedError(absl::StrFormat(
        "%d leaves exceed the per-subtree cap of %d", k, kMaxSubtreeSize));
  }
  if (rpb.size != k) {
    return absl::InvalidArgumentError("reserved budget table has the wrong size");
  }
  std::vector<std::string> exhausted;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i != j && rpb.at(i, j) >= config.epsilon) {
        exhausted.push_back(absl::StrFormat("(%d,%d)=%g", i, j, rpb.at(i, j)));
      }
    }
  }
  if (!exhausted.empty()) {
    return absl::FailedPreconditionError(absl::StrCat(
        "reserved budget exhausts epsilon for pairs ",
        absl::StrJoin(exhausted.begin(),
                      exhausted.begin() + std::min<size_t>(exhausted.size(), 8),
                      " "),
        exhausted.size() > 8 ? " ..." : ""));
  }
  absl::StatusOr<DistanceTable> d = DistanceTable::ForNodes(tree, leaves);
  if (!d.ok()) return d.status();
  absl::StatusOr<std::vector<double>> cost =
      LossCoefficients(tree, leaves, priors, config.targets);
  if (!cost.ok()) return cost.status();

  LinearProgram lp;
  lp.num_vars = k * k;
  lp.bounds.assign(lp.num_vars, VariableBounds{0.0, 1.0});
  for (int v = 0; v < lp.num_vars; ++v) {
    if ((*cost)[v] != 0.0) lp.objective.emplace_back(v, (*cost)[v]);
  }
  for (int i = 0; i < k; ++i) {
    LinearConstraint row;
    row.rhs = 1.0;
    for (int l = 0; l < k; ++l) row.row.emplace_back(i * k + l, 1.0);
    lp.eq_constraints.push_back(std::move(row));
  }
  lp.ineq_constraints.reserve(static_cast<size_t>(k) * (k - 1) * k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < k; ++i) {
      if (i == j) continue;
      const double factor =
          std::exp((config.epsilon - rpb.at(j, i)) * d->at(j, i));
      for (int l = 0; l < k; ++l) {
        LinearConstraint c;
        c.rhs = 0.0;
        if (std::isinf(factor)) {
          c.row = {{i * k + l, -1.0}};  // vacuous, keeps the count fixed
        } else {
          c.row = {{j * k + l, 1.0}, {i * k + l, -factor}};
        }
        lp.ineq_constraints.push_back(std::move(c));
      }
    }
  }
  return lp;
}

double MeanAbsoluteDifference(const ObfuscationMatrix& a,
                              const ObfuscationMatrix& b) {
  const int k = a.size();
  if (k == 0) return 0.0;
  double sum = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) sum += std::abs(a.at(i, j) - b.at(i, j));
  }
  return sum / (static_cast<double>(k) * k);
}

absl::StatusOr<SynthesisResult> GenerateRobustMatrix(
    std::span<const CellId> leaves, const LocationTree& tree,
    std::span<const double> priors, const SynthesisConfig& config) {
  if (auto s = config.Validate(); !s.ok()) return s;
  const int k = static_cast<int>(leaves.size());
  if (config.delta >= std::max(k, 1)) {
    return absl::InvalidArgumentError(
        absl::StrFormat("delta %d must be below the %d leaves", config.delta, k));
  }
  absl::StatusOr<DistanceTable> d = DistanceTable::ForNodes(tree, leaves);
  if (!d.ok()) return d.status();

  SynthesisResult result;
  result.rpb_mode = config.rpb_mode;
  if (result.rpb_mode == RpbMode::kAuto) {
    result.rpb_mode = config.delta <= kMaxExactDelta && k <= kMaxExactSize
                          ? RpbMode::kExact
                          : RpbMode::kApproximate;
  }

  absl::StatusOr<LinearProgram> lp =
      BuildFeasibleLp(leaves, tree, priors, config);
  if (!lp.ok()) return lp.status();
  double objective = 0.0;
  absl::StatusOr<ObfuscationMatrix> current =
      SolveToMatrix(*lp, leaves, config.solver, 0, &objective);
  if (!current.ok()) return current.status();
  result.objective_trace.push_back(objective);
  result.rpb = RpbTable::Zeros(k);

  for (int round = 1; round <= config.max_iterations; ++round) {
    absl::StatusOr<RpbTable> rpb =
        result.rpb_mode == RpbMode::kExact
            ? ComputeRpbExact(*current, *d, config.delta)
            : ComputeRpbApprox(*current, *d, config.delta, config.epsilon);
    if (!rpb.ok()) {
      return absl::Status(rpb.status().code(),
                          absl::StrCat("round ", round, ": ",
                                       rpb.status().message()));
    }
    lp = BuildRobustLp(leaves, tree, priors, config, *rpb);
    if (!lp.ok()) {
      return absl::Status(lp.status().code(),
                          absl::StrCat("round ", round, ": ",
                                       lp.status().message()));
    }
    absl::StatusOr<ObfuscationMatrix> next =
        SolveToMatrix(*lp, leaves, config.solver, round, &objective);
    if (!next.ok()) return next.status();
    const double divergence = MeanAbsoluteDifference(*next, *current);
    result.divergence_trace.push_back(divergence);
    result.objective_trace.push_back(objective);
    result.iterations = round;
    result.rpb = *std::move(rpb);
    current = std::move(next);
    if (divergence < config.convergence_threshold) {
      result.converged = true;
      break;
    }
  }
  result.matrix = *std::move(current);
  result.geo_ind_violations =
      AuditGeoInd(result.matrix, *d, config.epsilon).count();
  if (SubsetCount(k, config.delta) * k * k * k <= kDeltaAuditBudget) {
    absl::StatusOr<GeoIndReport> audit = AuditDeltaPrunable(
        result.matrix, *d, config.epsilon, config.delta);
    if (audit.ok()) result.delta_violations = audit->count();
  }
  return result;
}

json SynthesisResult::Manifest(const SynthesisConfig& config) const {
  return {{"config", config.ToJson()},
          {"leaves", matrix.size()},
          {"rpb_mode", RpbModeName(rpb_mode)},
          {"iterations", iterations},
          {"converged", converged},
          {"divergence_trace", divergence_trace},
          {"objective_trace", objective_trace},
          {"max_reserved_budget", rpb.max()},
          {"violations",
           {{"geo_ind", geo_ind_violations},
            {"delta_prunable", delta_violations}}}};
}

}  // namespace treeobf
