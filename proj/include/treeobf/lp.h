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
#ifndef TREEOBF_LP_H_
#define TREEOBF_LP_H_

#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"

namespace treeobf {

// A sparse row or vector: (index, coefficient) pairs. Indices need not be
// sorted; duplicates are summed.
using SparseVector = std::vector<std::pair<int, double>>;

struct LinearConstraint {
  SparseVector row;
  double rhs = 0.0;
};

struct VariableBounds {
  double lower = 0.0;
  double upper = std::numeric_limits<double>::infinity();
};

// minimize objective·x
//   s.t. row·x == rhs   for every equality
//        row·x <= rhs   for every inequality
//        lower <= x <= upper
// `bounds` may be empty, meaning every variable is in [0, +inf).
struct LinearProgram {
  int num_vars = 0;
  SparseVector objective;
  std::vector<LinearConstraint> eq_constraints;
  std::vector<LinearConstraint> ineq_constraints;
  std::vector<VariableBounds> bounds;

  absl::Status Validate() const;

  VariableBounds BoundsOf(int var) const {
    return bounds.empty() ? VariableBounds{} : bounds[var];
  }

  // CPLEX LP text format, for cross-checking against external solvers.
  std::string ToLpFormat() const;
};

enum class LpStatus { kOptimal, kInfeasible, kUnbounded, kIterationLimit };

const char* LpStatusName(LpStatus status);

struct LpSolution {
  LpStatus status = LpStatus::kIterationLimit;
  std::vector<double> x;
  double objective_value = 0.0;
  int iterations = 0;
  std::string diagnostics;
};

struct SolverOptions {
  double feasibility_tolerance = 1e-9;
  double optimality_tolerance = 1e-9;
  int max_iterations = 200000;
  // Basis refactorization interval (eta file length).
  int refactor_interval = 64;
};

// Solves `lp` with a bounded dual simplex working over the n x n basis of
// active constraints, which suits programs with many more rows than columns.
// Deterministic for a fixed input. Malformed programs yield an
// InvalidArgument status; solver outcomes are reported in LpSolution::status.
absl::StatusOr<LpSolution> Solve(const LinearProgram& lp,
                                 const SolverOptions& options = {});

// Largest violation of any equality, inequality or bound at `x` (absolute,
// unscaled). Independent of the solver.
double MaxConstraintViolation(const LinearProgram& lp,
                              const std::vector<double>& x);

double EvaluateObjective(const LinearProgram& lp, const std::vector<double>& x);

}  // namespace treeobf

#endif  // TREEOBF_LP_H_
