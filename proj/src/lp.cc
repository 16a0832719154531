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
#include <algorithm>
#include <cmath>
#include <sstream>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "treeobf/lp.h"

namespace treeobf {
namespace {

absl::Status ValidateRow(const SparseVector& row, int num_vars,
                         absl::string_view what, size_t index) {
  for (const auto& [var, coef] : row) {
    if (var < 0 || var >= num_vars) {
      return absl::InvalidArgumentError(absl::StrFormat(
          "%s %d references variable %d outside [0, %d)", what, index, var,
          num_vars));
    }
    if (!std::isfinite(coef)) {
      return absl::InvalidArgumentError(
          absl::StrFormat("%s %d has a non-finite coefficient", what, index));
    }
  }
  return absl::OkStatus();
}

double Dot(const SparseVector& row, const std::vector<double>& x) {
  double sum = 0.0;
  for (const auto& [var, coef] : row) sum += coef * x[var];
  return sum;
}

void AppendTerms(std::ostringstream& out, const SparseVector& row) {
  if (row.empty()) {
    out << " 0 x0";
    return;
  }
  for (const auto& [var, coef] : row) {
    out << (coef < 0 ? " - " : " + ") << absl::StrFormat("%.17g", std::abs(coef))
        << " x" << var;
  }
}

}  // namespace

absl::Status LinearProgram::Validate() const {
  if (num_vars < 0) return absl::InvalidArgumentError("negative num_vars");
  if (!bounds.empty() && static_cast<int>(bounds.size()) != num_vars) {
    return absl::InvalidArgumentError(
        absl::StrCat("bounds has ", bounds.size(), " entries for ", num_vars,
                     " variables"));
  }
  if (auto s = ValidateRow(objective, num_vars, "objective", 0); !s.ok()) {
    return s;
  }
  for (size_t i = 0; i < eq_constraints.size(); ++i) {
    if (auto s = ValidateRow(eq_constraints[i].row, num_vars, "equality", i);
        !s.ok()) {
      return s;
    }
    if (!std::isfinite(eq_constraints[i].rhs)) {
      return absl::InvalidArgumentError(
          absl::StrCat("equality ", i, " has a non-finite rhs"));
    }
  }
  for (size_t i = 0; i < ineq_constraints.size(); ++i) {
    if (auto s = ValidateRow(ineq_constraints[i].row, num_vars, "inequality", i);
        !s.ok()) {
      return s;
    }
    if (!std::isfinite(ineq_constraints[i].rhs)) {
      return absl::InvalidArgumentError(
          absl::StrCat("inequality ", i, " has a non-finite rhs"));
    }
  }
  for (size_t j = 0; j < bounds.size(); ++j) {
    const VariableBounds& b = bounds[j];
    if (std::isnan(b.lower) || std::isnan(b.upper) || b.lower > b.upper ||
        b.lower == std::numeric_limits<double>::infinity() ||
        b.upper == -std::numeric_limits<double>::infinity()) {
      return absl::InvalidArgumentError(
          absl::StrFormat("variable %d has invalid bounds [%g, %g]", j,
                          b.lower, b.upper));
    }
  }
  return absl::OkStatus();
}

std::string LinearProgram::ToLpFormat() const {
  std::ostringstream out;
  out << "\\ treeobf linear program: " << num_vars << " variables, "
      << eq_constraints.size() << " equalities, " << ineq_constraints.size()
      << " inequalities\n";
  out << "Minimize\n obj:";
  AppendTerms(out, objective);
  out << "\nSubject To\n";
  for (size_t i = 0; i < eq_constraints.size(); ++i) {
    out << " e" << i << ":";
    AppendTerms(out, eq_constraints[i].row);
    out << " = " << absl::StrFormat("%.17g", eq_constraints[i].rhs) << "\n";
  }
  for (size_t i = 0; i < ineq_constraints.size(); ++i) {
    out << " c" << i << ":";
    AppendTerms(out, ineq_constraints[i].row);
    out << " <= " << absl::StrFormat("%.17g", ineq_constraints[i].rhs) << "\n";
  }
  out << "Bounds\n";
  for (int j = 0; j < num_vars; ++j) {
    const VariableBounds b = BoundsOf(j);
    const bool has_lo = std::isfinite(b.lower);
    const bool has_hi = std::isfinite(b.upper);
    if (!has_lo && !has_hi) {
      out << " x" << j << " free\n";
    } else if (!has_lo) {
      out << " -inf <= x" << j << " <= " << absl::StrFormat("%.17g", b.upper)
          << "\n";
    } else if (!has_hi) {
      out << " x" << j << " >= " << absl::StrFormat("%.17g", b.lower) << "\n";
    } else {
      out << " " << absl::StrFormat("%.17g", b.lower) << " <= x" << j
          << " <= " << absl::StrFormat("%.17g", b.upper) << "\n";
    }
  }
  out << "End\n";
  return out.str();
}

const char* LpStatusName(LpStatus status) {
  switch (status) {
    case LpStatus::kOptimal:
      return "optimal";
    case LpStatus::kInfeasible:
      return "infeasible";
    case LpStatus::kUnbounded:
      return "unbounded";
    case LpStatus::kIterationLimit:
      return "iteration_limit";
  }
  return "unknown";
}

double MaxConstraintViolation(const LinearProgram& lp,
                              const std::vector<double>& x) {
  double worst = 0.0;
  for (const auto& c : lp.eq_constraints) {
    worst = std::max(worst, std::abs(Dot(c.row, x) - c.rhs));
  }
  for (const auto& c : lp.ineq_constraints) {
    worst = std::max(worst, Dot(c.row, x) - c.rhs);
  }
  for (int j = 0; j < lp.num_vars; ++j) {
    const VariableBounds b = lp.BoundsOf(j);
    worst = std::max(worst, b.lower - x[j]);
    worst = std::max(worst, x[j] - b.upper);
  }
  return worst;
}

double EvaluateObjective(const LinearProgram& lp,
                         const std::vector<double>& x) {
  return Dot(lp.objective, x);
}

}  // namespace treeobf
