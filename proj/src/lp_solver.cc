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

// Bounded dual simplex in the "active constraint" form.
//
// Every constraint (bounds included) is rewritten as a_i·x >= b_i and scaled
// so that max |a_i| = 1. The basis is a set W of n linearly independent
// constraints held at equality; x = B^{-1} b_W with B the n x n matrix whose
// rows are those constraints, and the multipliers solve B^T lambda = c. Dual
// feasibility (lambda >= 0) is established up front by putting each variable
// at the bound its cost points to, then maintained while the most violated
// constraint is pivoted into W. The basis dimension is the number of
// variables, not the number of constraints.
//
// We factor M = B^T with Eigen's SparseLU and append product-form etas between
// refactorizations.

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "absl/strings/str_format.h"
#include "treeobf/lp.h"

namespace treeobf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
// Stand-in box for infinite bounds. A solution resting on one of these
// with a positive multiplier means the program is unbounded.
constexpr double kArtificialBound = 1e7;
constexpr double kPivotTolerance = 1e-9;
// Iterations without objective progress before switching to Bland's rule.
constexpr int kStallLimit = 500;

// Constraints a_i·x >= b_i in compressed row storage.
struct RowSet {
  std::vector<int> start = {0};
  std::vector<int> index;
  std::vector<double> value;
  std::vector<double> rhs;
  std::vector<double> scale;  // max |coefficient| before scaling
  std::vector<bool> artificial;

  int size() const { return static_cast<int>(rhs.size()); }

  // Adds sign * row >= sign * rhs. Returns false if the row is empty and
  // can never be satisfied.
  bool Add(const SparseVector& merged, double rhs_value, double sign,
           bool is_artificial) {
    double max_abs = 0.0;
    for (const auto& [var, coef] : merged) max_abs = std::max(max_abs, std::abs(coef));
    if (max_abs == 0.0) return sign * rhs_value <= 0.0;
    for (const auto& [var, coef] : merged) {
      index.push_back(var);
      value.push_back(sign * coef / max_abs);
    }
    start.push_back(static_cast<int>(index.size()));
    rhs.push_back(sign * rhs_value / max_abs);
    scale.push_back(max_abs);
    artificial.push_back(is_artificial);
    return true;
  }

  double Dot(int row, const std::vector<double>& x) const {
    double sum = 0.0;
    for (int k = start[row]; k < start[row + 1]; ++k) sum += value[k] * x[index[k]];
    return sum;
  }
};

SparseVector Merge(SparseVector row) {
  std::sort(row.begin(), row.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  SparseVector merged;
  for (const auto& [var, coef] : row) {
    if (!merged.empty() && merged.back().first == var) {
      merged.back().second += coef;
    } else {
      merged.emplace_back(var, coef);
    }
  }
  std::erase_if(merged, [](const auto& t) { return t.second == 0.0; });
  return merged;
}

struct Eta {
  int pivot_pos;
  double pivot;
  std::vector<std::pair<int, double>> others;
};

class DualSimplex {
 public:
  DualSimplex(RowSet rows, std::vector<double> cost, std::vector<int> basis,
              const SolverOptions& options)
      : rows_(std::move(rows)),
        cost_(std::move(cost)),
        n_(static_cast<int>(cost_.size())),
        basis_(std::move(basis)),
        options_(options),
        in_basis_(rows_.size(), -1),
        x_(n_, 0.0),
        lambda_(n_, 0.0) {
    for (int p = 0; p < n_; ++p) in_basis_[basis_[p]] = p;
  }

  LpSolution Run();

 private:
  bool Refactor();
  Eigen::VectorXd Ftran(Eigen::VectorXd v) const;
  Eigen::VectorXd Btran(Eigen::VectorXd v) const;
  double RowTolerance(int row) const {
    return options_.feasibility_tolerance * 0.1 / std::max(1.0, rows_.scale[row]);
  }

  RowSet rows_;
  std::vector<double> cost_;
  int n_;
  std::vector<int> basis_;  // position -> row
  SolverOptions options_;
  std::vector<int> in_basis_;  // row -> position or -1
  std::vector<double> x_;
  std::vector<double> lambda_;  // by basis position

  // transpose() is non-const in Eigen 3.4.
  mutable Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>>
      lu_;
  std::vector<Eta> etas_;
};

bool DualSimplex::Refactor() {
  std::vector<Eigen::Triplet<double>> triplets;
  for (int p = 0; p < n_; ++p) {
    const int row = basis_[p];
    for (int k = rows_.start[row]; k < rows_.start[row + 1]; ++k) {
      triplets.emplace_back(rows_.index[k], p, rows_.value[k]);
    }
  }
  Eigen::SparseMatrix<double> m(n_, n_);
  m.setFromTriplets(triplets.begin(), triplets.end());
  m.makeCompressed();
  lu_.analyzePattern(m);
  lu_.factorize(m);
  etas_.clear();
  if (lu_.info() != Eigen::Success) return false;

  Eigen::VectorXd b(n_), c(n_);
  for (int p = 0; p < n_; ++p) {
    b[p] = rows_.rhs[basis_[p]];
    c[p] = cost_[p];
  }
  const Eigen::VectorXd x = Btran(b);
  const Eigen::VectorXd lambda = Ftran(c);
  for (int j = 0; j < n_; ++j) {
    x_[j] = x[j];
    lambda_[j] = lambda[j];
  }
  return true;
}

// Solves M y = v.
Eigen::VectorXd DualSimplex::Ftran(Eigen::VectorXd v) const {
  Eigen::VectorXd y = lu_.solve(v);
  for (const Eta& eta : etas_) {
    const double yq = y[eta.pivot_pos] / eta.pivot;
    y[eta.pivot_pos] = yq;
    if (yq != 0.0) {
      for (const auto& [i, u] : eta.others) y[i] -= u * yq;
    }
  }
  return y;
}

// Solves M^T y = v.
Eigen::VectorXd DualSimplex::Btran(Eigen::VectorXd v) const {
  for (auto it = etas_.rbegin(); it != etas_.rend(); ++it) {
    double acc = v[it->pivot_pos];
    for (const auto& [i, u] : it->others) acc -= u * v[i];
    v[it->pivot_pos] = acc / it->pivot;
  }
  return lu_.transpose().solve(v);
}

LpSolution DualSimplex::Run() {
  LpSolution solution;
  if (!Refactor()) {
    solution.status = LpStatus::kIterationLimit;
    solution.diagnostics = "initial basis is singular";
    return solution;
  }
  bool fresh = true;
  bool bland = false;
  int stall = 0;
  double best_objective = -kInf;
  const int num_rows = rows_.size();

  for (int iter = 0; iter < options_.max_iterations; ++iter) {
    solution.iterations = iter;

    // Pricing: most violated row outside the basis.
    int entering = -1;
    double worst = 0.0;
    for (int i = 0; i < num_rows; ++i) {
      if (in_basis_[i] >= 0) continue;
      const double violation = rows_.rhs[i] - rows_.Dot(i, x_);
      if (violation <= RowTolerance(i)) continue;
      if (bland) {
        entering = i;
        break;
      }
      if (violation > worst) {
        worst = violation;
        entering = i;
      }
    }

    if (entering < 0) {
      if (!fresh) {
        if (!Refactor()) break;
        fresh = true;
        continue;
      }
      solution.status = LpStatus::kOptimal;
      for (int p = 0; p < n_; ++p) {
        if (rows_.artificial[basis_[p]] &&
            lambda_[p] > options_.optimality_tolerance) {
          solution.status = LpStatus::kUnbounded;
          solution.diagnostics = "solution rests on an artificial bound";
        }
      }
      solution.x = x_;
      return solution;
    }

    // Dual ratio test (Harris two-pass).
    Eigen::VectorXd a = Eigen::VectorXd::Zero(n_);
    for (int k = rows_.start[entering]; k < rows_.start[entering + 1]; ++k) {
      a[rows_.index[k]] = rows_.value[k];
    }
    const Eigen::VectorXd u = Ftran(a);
    double theta_max = kInf;
    for (int p = 0; p < n_; ++p) {
      if (u[p] > kPivotTolerance) {
        theta_max = std::min(
            theta_max,
            (std::max(lambda_[p], 0.0) + options_.optimality_tolerance) / u[p]);
      }
    }
    if (theta_max == kInf) {
      if (!fresh) {
        if (!Refactor()) break;
        fresh = true;
        continue;
      }
      solution.status = LpStatus::kInfeasible;
      solution.diagnostics = absl::StrFormat(
          "constraint row %d cannot be satisfied (dual ray)", entering);
      return solution;
    }
    int leaving = -1;
    for (int p = 0; p < n_; ++p) {
      if (u[p] <= kPivotTolerance) continue;
      if (std::max(lambda_[p], 0.0) / u[p] > theta_max) continue;
      if (leaving < 0) {
        leaving = p;
      } else if (bland ? basis_[p] < basis_[leaving] : u[p] > u[leaving]) {
        leaving = p;
      }
    }

    const double pivot = u[leaving];
    const double theta_dual = std::max(lambda_[leaving], 0.0) / pivot;
    for (int p = 0; p < n_; ++p) lambda_[p] -= theta_dual * u[p];
    lambda_[leaving] = theta_dual;

    Eigen::VectorXd e = Eigen::VectorXd::Zero(n_);
    e[leaving] = 1.0;
    const Eigen::VectorXd d = Btran(e);
    const double step = (rows_.rhs[entering] - rows_.Dot(entering, x_)) / pivot;
    for (int j = 0; j < n_; ++j) x_[j] += step * d[j];

    in_basis_[basis_[leaving]] = -1;
    basis_[leaving] = entering;
    in_basis_[entering] = leaving;

    Eta eta{leaving, pivot, {}};
    for (int p = 0; p < n_; ++p) {
      if (p != leaving && u[p] != 0.0) eta.others.emplace_back(p, u[p]);
    }
    etas_.push_back(std::move(eta));
    fresh = false;
    if (static_cast<int>(etas_.size()) >= options_.refactor_interval) {
      if (!Refactor()) break;
    }

    double objective = 0.0;
    for (int j = 0; j < n_; ++j) objective += cost_[j] * x_[j];
    if (objective > best_objective + 1e-12 * std::max(1.0, std::abs(objective))) {
      best_objective = objective;
      stall = 0;
      bland = false;
    } else if (++stall > kStallLimit) {
      bland = true;
    }
  }
  solution.status = LpStatus::kIterationLimit;
  if (solution.diagnostics.empty()) {
    solution.diagnostics = absl::StrFormat(
        "stopped after %d iterations (%s)", solution.iterations,
        lu_.info() == Eigen::Success ? "limit reached" : "singular basis");
  }
  solution.x = x_;
  return solution;
}

}  // namespace

absl::StatusOr<LpSolution> Solve(const LinearProgram& lp,
                                 const SolverOptions& options) {
  if (auto status = lp.Validate(); !status.ok()) return status;
  const int n = lp.num_vars;

  std::vector<double> cost(n, 0.0);
  for (const auto& [var, coef] : lp.objective) cost[var] += coef;

  RowSet rows;
  std::vector<int> basis(n, -1);
  for (int j = 0; j < n; ++j) {
    const VariableBounds b = lp.BoundsOf(j);
    const bool lower_artificial = !std::isfinite(b.lower);
    const bool upper_artificial = !std::isfinite(b.upper);
    const double lower = lower_artificial ? -kArtificialBound : b.lower;
    const double upper = upper_artificial ? kArtificialBound : b.upper;
    const int lower_row = rows.size();
    rows.Add({{j, 1.0}}, lower, 1.0, lower_artificial);
    const int upper_row = rows.size();
    rows.Add({{j, 1.0}}, upper, -1.0, upper_artificial);
    // Each variable starts on the bound its cost points to, so every
    // multiplier is non-negative.
    if (cost[j] > 0.0) {
      basis[j] = lower_row;
    } else if (cost[j] < 0.0) {
      basis[j] = upper_row;
    } else {
      basis[j] = (lower_artificial && !upper_artificial) ? upper_row : lower_row;
    }
  }
  bool trivially_infeasible = false;
  for (const auto& c : lp.eq_constraints) {
    const SparseVector merged = Merge(c.row);
    trivially_infeasible |= !rows.Add(merged, c.rhs, 1.0, false);
    trivially_infeasible |= !rows.Add(merged, c.rhs, -1.0, false);
  }
  for (const auto& c : lp.ineq_constraints) {
    trivially_infeasible |= !rows.Add(Merge(c.row), c.rhs, -1.0, false);
  }

  LpSolution solution;
  if (trivially_infeasible) {
    solution.status = LpStatus::kInfeasible;
    solution.diagnostics = "an empty constraint row has an unsatisfiable rhs";
    return solution;
  }
  if (n == 0) {
    solution.status = LpStatus::kOptimal;
    return solution;
  }

  DualSimplex simplex(std::move(rows), cost, std::move(basis), options);
  solution = simplex.Run();
  if (solution.x.size() != static_cast<size_t>(n)) {
    solution.x.clear();
    if (solution.status == LpStatus::kOptimal) {
      solution.status = LpStatus::kIterationLimit;
      solution.diagnostics = "solver returned no primal point";
    }
    return solution;
  }
  solution.objective_value = EvaluateObjective(lp, solution.x);
  if (solution.status == LpStatus::kOptimal) {
    const double violation = MaxConstraintViolation(lp, solution.x);
    if (violation > options.feasibility_tolerance) {
      solution.status = LpStatus::kIterationLimit;
      solution.diagnostics = absl::StrFormat(
          "numerical failure: residual %.3g exceeds tolerance", violation);
    }
  }
  return solution;
}

}  // namespace treeobf
