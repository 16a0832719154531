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
#include <random>
#include <vector>

#include "gtest/gtest.h"
#include "test_support.h"
#include "treeobf/bench.h"

namespace treeobf {
namespace {

using testing::MakeMatrix;
using testing::OracleRpb;
using testing::RandomGeoInd;
using testing::RandomMetric;
using testing::RandomStochastic;
using testing::Rows;

LocationTree Grid(int branching, double cell_size) {
  TreeConfig config;
  config.branching = branching;
  config.height = 1;
  config.cell_size = cell_size;
  return *LocationTree::BuildSynthetic(config);
}

DistanceTable Table(int k, const std::vector<double>& d) {
  return *DistanceTable::FromValues(k, d);
}

std::vector<double> Uniform(size_t k) { return std::vector<double>(k, 1.0 / k); }

SynthesisConfig Config(const LocationTree& tree, double eps, int delta,
                       uint64_t seed = 1, int num_targets = 3) {
  SynthesisConfig config;
  config.epsilon = eps;
  config.delta = delta;
  config.targets = RandomTargets(tree, num_targets, seed);
  return config;
}

// Row values of every inequality at x, sorted.
std::vector<double> IneqValues(const LinearProgram& lp, const std::vector<double>& x) {
  std::vector<double> out;
  for (const auto& c : lp.ineq_constraints) {
    double v = -c.rhs;
    for (auto [j, a] : c.row) v += a * x[j];
    out.push_back(v);
  }
  std::sort(out.begin(), out.end());
  return out;
}

TEST(SynthesisConfigTest, Validate) {
  SynthesisConfig config;
  EXPECT_TRUE(config.Validate().ok());
  config.epsilon = 0.0;
  EXPECT_FALSE(config.Validate().ok());
  config.epsilon = INFINITY;
  EXPECT_TRUE(config.Validate().ok());
  config.delta = -1;
  EXPECT_FALSE(config.Validate().ok());
  config.delta = 0;
  config.convergence_threshold = 0.0;
  EXPECT_FALSE(config.Validate().ok());
  EXPECT_EQ(*ParseRpbMode("approximate"), RpbMode::kApproximate);
  EXPECT_FALSE(ParseRpbMode("fast").ok());
}

TEST(BuildFeasibleLpTest, Counts) {
  for (int k : {2, 3, 5}) {
    const LocationTree tree = Grid(k, 1.0);
    absl::StatusOr<LinearProgram> lp =
        BuildFeasibleLp(tree.leaves(), tree, Uniform(k), Config(tree, 1.0, 0));
    ASSERT_TRUE(lp.ok()) << lp.status();
    EXPECT_EQ(lp->num_vars, k * k);
    EXPECT_EQ(lp->eq_constraints.size(), static_cast<size_t>(k));
    EXPECT_EQ(lp->ineq_constraints.size(), static_cast<size_t>(k * (k - 1) * k));
    for (int v = 0; v < lp->num_vars; ++v) {
      EXPECT_EQ(lp->BoundsOf(v).lower, 0.0);
      EXPECT_EQ(lp->BoundsOf(v).upper, 1.0);
    }
  }
}

TEST(BuildFeasibleLpTest, RejectsBadSizes) {
  const LocationTree tree = Grid(41, 1.0);
  const SynthesisConfig config = Config(tree, 1.0, 0);
  const std::vector<CellId> one = {tree.leaves()[0]};
  EXPECT_EQ(BuildFeasibleLp(one, tree, Uniform(1), config).status().code(),
            absl::StatusCode::kInvalidArgument);
  EXPECT_EQ(BuildFeasibleLp(tree.leaves(), tree, Uniform(41), config).status().code(),
            absl::StatusCode::kResourceExhausted);
}

TEST(BuildFeasibleLpTest, RowsMatchOracle) {
  std::mt19937_64 rng(3);
  const LocationTree tree = Grid(4, 0.5);
  const int k = 4;
  const SynthesisConfig config = Config(tree, 1.7, 0);
  absl::StatusOr<LinearProgram> lp =
      BuildFeasibleLp(tree.leaves(), tree, Uniform(k), config);
  ASSERT_TRUE(lp.ok());
  std::vector<double> x(k * k);
  for (double& v : x) v = testing::Unit(rng);
  std::vector<double> expected;
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < k; ++i) {
      if (i == j) continue;
      const double f = std::exp(1.7 * *tree.Distance(tree.leaves()[j], tree.leaves()[i]));
      for (int l = 0; l < k; ++l) expected.push_back(x[j * k + l] - f * x[i * k + l]);
    }
  }
  std::sort(expected.begin(), expected.end());
  const std::vector<double> got = IneqValues(*lp, x);
  ASSERT_EQ(got.size(), expected.size());
  for (size_t r = 0; r < got.size(); ++r) EXPECT_NEAR(got[r], expected[r], 1e-12);

  absl::StatusOr<std::vector<double>> c =
      LossCoefficients(tree, tree.leaves(), Uniform(k), config.targets);
  std::vector<double> objective(k * k, 0.0);
  for (auto [v, a] : lp->objective) objective[v] += a;
  for (int v = 0; v < k * k; ++v) EXPECT_NEAR(objective[v], (*c)[v], 1e-15);
}

TEST(BuildFeasibleLpTest, SolutionIsStochasticAndGeoInd) {
  const LocationTree tree = Grid(2, 1.0);
  SynthesisConfig config = Config(tree, 0.8, 0);
  config.targets = TargetSet{{tree.leaves()[0]}};
  absl::StatusOr<LinearProgram> lp =
      BuildFeasibleLp(tree.leaves(), tree, Uniform(2), config);
  absl::StatusOr<LpSolution> s = Solve(*lp);
  ASSERT_TRUE(s.ok());
  ASSERT_EQ(s->status, LpStatus::kOptimal);
  absl::StatusOr<ObfuscationMatrix> z = ObfuscationMatrix::Create(
      0, tree.leaves(), {{s->x[0], s->x[1]}, {s->x[2], s->x[3]}});
  ASSERT_TRUE(z.ok()) << z.status();
  EXPECT_EQ(AuditGeoInd(*z, tree, 0.8)->count(), 0);
}

TEST(GenerateRobustMatrixTest, InfiniteBudgetGivesIdentity) {
  const LocationTree tree = Grid(2, 1.0);
  absl::StatusOr<SynthesisResult> r = GenerateRobustMatrix(
      tree.leaves(), tree, Uniform(2), Config(tree, INFINITY, 0));
  ASSERT_TRUE(r.ok()) << r.status();
  EXPECT_EQ(r->matrix, ObfuscationMatrix::Identity(0, tree.leaves()));
  EXPECT_DOUBLE_EQ(r->objective_trace.back(), 0.0);
}

TEST(ComputeRpbExactTest, HandExample) {
  const ObfuscationMatrix z =
      MakeMatrix({{0.5, 0.3, 0.2}, {0.2, 0.3, 0.5}, {0.3, 0.4, 0.3}});
  const DistanceTable d = Table(3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
  absl::StatusOr<RpbTable> rpb = ComputeRpbExact(z, d, 1);
  ASSERT_TRUE(rpb.ok()) << rpb.status();
  EXPECT_NEAR(rpb->at(0, 1), std::log(1.6), 1e-15);
  EXPECT_EQ(rpb->at(0, 0), 0.0);
}

TEST(ComputeRpbExactTest, ZeroCases) {
  std::mt19937_64 rng(5);
  const int k = 5;
  const DistanceTable d = Table(k, RandomMetric(k, rng));
  absl::StatusOr<RpbTable> uniform =
      ComputeRpbExact(ObfuscationMatrix::Uniform(0, testing::Ids(k)), d, 3);
  ASSERT_TRUE(uniform.ok());
  EXPECT_EQ(uniform->max(), 0.0);
  absl::StatusOr<RpbTable> none = ComputeRpbExact(MakeMatrix(RandomStochastic(k, rng)), d, 0);
  ASSERT_TRUE(none.ok());
  EXPECT_EQ(none->max(), 0.0);
}

TEST(ComputeRpbExactTest, Errors) {
  const DistanceTable d = Table(3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
  const ObfuscationMatrix z =
      MakeMatrix({{0.0, 0.0, 1.0}, {0.2, 0.3, 0.5}, {0.3, 0.4, 0.3}});
  absl::StatusOr<RpbTable> rpb = ComputeRpbExact(z, d, 1);
  EXPECT_EQ(rpb.status().code(), absl::StatusCode::kFailedPrecondition);
  EXPECT_NE(rpb.status().message().find("unboundable"), std::string::npos);
  EXPECT_FALSE(ComputeRpbExact(z, d, 3).ok());
  const ObfuscationMatrix big = ObfuscationMatrix::Uniform(0, testing::Ids(26));
  std::mt19937_64 rng(1);
  EXPECT_EQ(ComputeRpbExact(big, Table(26, RandomMetric(26, rng)), 1).status().code(),
            absl::StatusCode::kResourceExhausted);
  const ObfuscationMatrix mid = ObfuscationMatrix::Uniform(0, testing::Ids(8));
  EXPECT_EQ(ComputeRpbExact(mid, Table(8, RandomMetric(8, rng)), 6).status().code(),
            absl::StatusCode::kResourceExhausted);
}

TEST(ComputeRpbExactPropertyTest, MatchesBitmaskOracle) {
  std::mt19937_64 rng(6);
  int compared = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int k = testing::Between(rng, 2, 8);
    const int delta = testing::Between(rng, 0, std::min(3, k - 1));
    const std::vector<double> d = RandomMetric(k, rng);
    const Rows rows = RandomStochastic(k, rng);
    std::vector<double> expected;
    const bool bounded = OracleRpb(rows, d, delta, &expected);
    absl::StatusOr<RpbTable> rpb = ComputeRpbExact(MakeMatrix(rows), Table(k, d), delta);
    ASSERT_EQ(rpb.ok(), bounded) << rpb.status();
    if (!bounded) continue;
    ++compared;
    for (int v = 0; v < k * k; ++v) {
      EXPECT_NEAR(rpb->values[v], expected[v], 1e-9 * std::max(1.0, expected[v]));
    }
  }
  EXPECT_GT(compared, 150);
}

TEST(ComputeRpbApproxTest, UniformFormula) {
  const int k = 4;
  const double d = 0.7;
  std::vector<double> values(k * k, d);
  for (int i = 0; i < k; ++i) values[i * k + i] = 0.0;
  const double eps = std::log(2.0) / d;
  absl::StatusOr<RpbTable> rpb = ComputeRpbApprox(
      ObfuscationMatrix::Uniform(0, testing::Ids(k)), Table(k, values), 1, eps);
  ASSERT_TRUE(rpb.ok()) << rpb.status();
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      EXPECT_NEAR(rpb->at(i, j), i == j ? 0.0 : std::log(7.0 / 6.0) / d, 1e-15);
    }
  }
  absl::StatusOr<RpbTable> zero = ComputeRpbApprox(
      ObfuscationMatrix::Uniform(0, testing::Ids(k)), Table(k, values), 0, eps);
  EXPECT_EQ(zero->max(), 0.0);
}

TEST(ComputeRpbApproxTest, RequiresGeoIndInput) {
  const DistanceTable d = Table(2, {0, 1, 1, 0});
  EXPECT_EQ(ComputeRpbApprox(MakeMatrix({{0.9, 0.1}, {0.1, 0.9}}), d, 1, 0.5)
                .status()
                .code(),
            absl::StatusCode::kFailedPrecondition);
}

TEST(ComputeRpbApproxPropertyTest, UpperBoundsExactBudget) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = 6;
    const int delta = testing::Between(rng, 1, 3);
    const std::vector<double> d = RandomMetric(k, rng);
    const double eps = 0.5 + 4.0 * testing::Unit(rng);
    const ObfuscationMatrix z = MakeMatrix(RandomGeoInd(k, d, eps, rng));
    absl::StatusOr<RpbTable> exact = ComputeRpbExact(z, Table(k, d), delta);
    absl::StatusOr<RpbTable> approx = ComputeRpbApprox(z, Table(k, d), delta, eps);
    ASSERT_TRUE(exact.ok() && approx.ok());
    for (int v = 0; v < k * k; ++v) {
      EXPECT_GE(approx->values[v], exact->values[v] - 1e-12) << trial << " " << v;
    }
  }
}

TEST(BuildRobustLpTest, ZeroBudgetsReproduceFeasibleLp) {
  const LocationTree tree = Grid(4, 1.0);
  const SynthesisConfig config = Config(tree, 1.3, 2);
  absl::StatusOr<LinearProgram> feasible =
      BuildFeasibleLp(tree.leaves(), tree, Uniform(4), config);
  absl::StatusOr<LinearProgram> robust =
      BuildRobustLp(tree.leaves(), tree, Uniform(4), config, RpbTable::Zeros(4));
  ASSERT_TRUE(feasible.ok() && robust.ok());
  EXPECT_EQ(feasible->ToLpFormat(), robust->ToLpFormat());
}

TEST(BuildRobustLpTest, BudgetsTightenConstraints) {
  const LocationTree tree = Grid(2, 1.0);
  const double eps = 2.0;
  SynthesisConfig config = Config(tree, eps, 1);
  config.targets = TargetSet{{tree.leaves()[0]}};
  RpbTable rpb = RpbTable::Zeros(2);
  rpb.values = {0.0, eps / 2, eps / 2, 0.0};
  absl::StatusOr<LinearProgram> lp =
      BuildRobustLp(tree.leaves(), tree, Uniform(2), config, rpb);
  ASSERT_TRUE(lp.ok());
  EXPECT_EQ(lp->ineq_constraints.size(), 4u);
  absl::StatusOr<LpSolution> s = Solve(*lp);
  ASSERT_EQ(s->status, LpStatus::kOptimal);
  const ObfuscationMatrix z = *ObfuscationMatrix::Create(
      0, tree.leaves(), {{s->x[0], s->x[1]}, {s->x[2], s->x[3]}});
  EXPECT_EQ(AuditGeoInd(z, tree, eps / 2)->count(), 0);
  EXPECT_GT(AuditGeoInd(z, tree, eps / 2 * 0.9)->count(), 0);

  rpb.values = {0.0, eps, 0.1, 0.0};
  absl::StatusOr<LinearProgram> exhausted =
      BuildRobustLp(tree.leaves(), tree, Uniform(2), config, rpb);
  EXPECT_EQ(exhausted.status().code(), absl::StatusCode::kFailedPrecondition);
  EXPECT_NE(exhausted.status().message().find("(0,1)"), std::string::npos);
}

TEST(GenerateRobustMatrixTest, DeltaZeroIsImmediateFixpoint) {
  const LocationTree tree = Grid(6, 0.05);
  absl::StatusOr<SynthesisResult> r =
      GenerateRobustMatrix(tree.leaves(), tree, Uniform(6), Config(tree, 50, 0));
  ASSERT_TRUE(r.ok()) << r.status();
  EXPECT_EQ(r->iterations, 1);
  EXPECT_EQ(r->divergence_trace, std::vector<double>{0.0});
  EXPECT_TRUE(r->converged);
  EXPECT_EQ(r->objective_trace.size(), 2u);
  EXPECT_EQ(r->geo_ind_violations, 0);
  EXPECT_LE(r->matrix.MaxRowSumError(), 1e-9);
}

TEST(GenerateRobustMatrixTest, ManifestAndTraceInvariants) {
  const LocationTree tree = Grid(6, 0.05);
  SynthesisConfig config = Config(tree, 50, 1, 2);
  config.max_iterations = 30;
  absl::StatusOr<SynthesisResult> r =
      GenerateRobustMatrix(tree.leaves(), tree, Uniform(6), config);
  ASSERT_TRUE(r.ok()) << r.status();
  EXPECT_LE(static_cast<int>(r->divergence_trace.size()), config.max_iterations);
  EXPECT_EQ(static_cast<int>(r->divergence_trace.size()), r->iterations);
  for (double v : r->divergence_trace) EXPECT_TRUE(std::isfinite(v));
  if (r->converged) {
    EXPECT_LT(r->divergence_trace.back(), config.convergence_threshold);
  }
  EXPECT_LE(r->matrix.MaxRowSumError(), 1e-9);
  const nlohmann::json m = r->Manifest(config);
  EXPECT_EQ(m["iterations"], r->iterations);
  EXPECT_EQ(m["leaves"], 6);
  EXPECT_EQ(m["config"]["delta"], 1);
  EXPECT_EQ(m["rpb_mode"], "exact");
  EXPECT_EQ(m["violations"]["delta_prunable"], r->delta_violations);
}

TEST(GenerateRobustMatrixTest, DeterministicAcrossRuns) {
  const LocationTree tree = Grid(6, 0.05);
  const SynthesisConfig config = Config(tree, 50, 1, 4);
  absl::StatusOr<SynthesisResult> a =
      GenerateRobustMatrix(tree.leaves(), tree, Uniform(6), config);
  absl::StatusOr<SynthesisResult> b =
      GenerateRobustMatrix(tree.leaves(), tree, Uniform(6), config);
  ASSERT_TRUE(a.ok() && b.ok());
  EXPECT_EQ(a->matrix, b->matrix);
  EXPECT_EQ(a->divergence_trace, b->divergence_trace);
}

TEST(GenerateRobustMatrixTest, RejectsDeltaAtLeastK) {
  const LocationTree tree = Grid(3, 0.05);
  EXPECT_FALSE(
      GenerateRobustMatrix(tree.leaves(), tree, Uniform(3), Config(tree, 50, 3)).ok());
}

TEST(GenerateRobustMatrixTest, NonRobustFiveByFiveIsNotPrunable) {
  const LocationTree tree = Grid(5, 0.05);
  absl::StatusOr<SynthesisResult> r =
      GenerateRobustMatrix(tree.leaves(), tree, Uniform(5), Config(tree, 50, 0, 9));
  ASSERT_TRUE(r.ok());
  absl::StatusOr<DistanceTable> d = DistanceTable::ForNodes(tree, tree.leaves());
  EXPECT_EQ(AuditGeoInd(r->matrix, *d, 50).count(), 0);
  absl::StatusOr<GeoIndReport> pruned = AuditDeltaPrunable(r->matrix, *d, 50, 2);
  ASSERT_TRUE(pruned.ok());
  EXPECT_GE(pruned->count(), 1);
}

// Seeds for which the exact fixpoint reaches 1e-6 on the 6-leaf grid.
class RobustInstanceTest : public ::testing::TestWithParam<uint64_t> {};

TEST_P(RobustInstanceTest, UtilityAndObjectiveOrdering) {
  const LocationTree tree = Grid(6, 0.05);
  const std::vector<double> priors = Uniform(6);
  SynthesisConfig config = Config(tree, 50, 1, GetParam());
  config.convergence_threshold = 1e-6;
  config.max_iterations = 300;
  config.rpb_mode = RpbMode::kExact;
  absl::StatusOr<SynthesisResult> exact =
      GenerateRobustMatrix(tree.leaves(), tree, priors, config);
  ASSERT_TRUE(exact.ok()) << exact.status();
  ASSERT_TRUE(exact->converged);
  EXPECT_EQ(exact->delta_violations, 0);

  SynthesisConfig feasible_config = config;
  feasible_config.delta = 0;
  absl::StatusOr<SynthesisResult> feasible =
      GenerateRobustMatrix(tree.leaves(), tree, priors, feasible_config);
  ASSERT_TRUE(feasible.ok());
  const double loss_robust = *ExpectedLoss(exact->matrix, tree, priors, config.targets);
  const double loss_feasible =
      *ExpectedLoss(feasible->matrix, tree, priors, config.targets);
  EXPECT_GE(loss_robust, loss_feasible - 1e-12);

  SynthesisConfig approx_config = config;
  approx_config.rpb_mode = RpbMode::kApproximate;
  absl::StatusOr<SynthesisResult> approx =
      GenerateRobustMatrix(tree.leaves(), tree, priors, approx_config);
  ASSERT_TRUE(approx.ok()) << approx.status();
  EXPECT_GE(approx->objective_trace.back(), exact->objective_trace.back() - 1e-9);
  EXPECT_GE(exact->objective_trace.back(), feasible->objective_trace.back() - 1e-9);
}

INSTANTIATE_TEST_SUITE_P(Seeds, RobustInstanceTest, ::testing::Values(1, 2, 3, 4, 5));

// Any matrix meeting the tightened constraints with its own exact budgets
// survives every prune of at most delta columns.
TEST(PrunabilityPropertyTest, TightenedConstraintsImplyPrunability) {
  std::mt19937_64 rng(8);
  int checked = 0;
  for (int trial = 0; trial < 400 && checked < 60; ++trial) {
    const int k = testing::Between(rng, 3, 9);
    const int delta = testing::Between(rng, 1, std::min(3, k - 2));
    const std::vector<double> d = RandomMetric(k, rng);
    const double eps = 2.0 + 6.0 * testing::Unit(rng);
    const Rows rows = RandomGeoInd(k, d, eps * testing::Unit(rng), rng);
    std::vector<double> rpb;
    if (!OracleRpb(rows, d, delta, &rpb)) continue;
    bool tight = true;
    for (int i = 0; i < k && tight; ++i) {
      for (int j = 0; j < k && tight; ++j) {
        if (i == j) continue;
        const double f = std::exp((eps - rpb[i * k + j]) * d[i * k + j]);
        for (int c = 0; c < k; ++c) tight = tight && rows[i][c] <= f * rows[j][c];
      }
    }
    if (!tight) continue;
    ++checked;
    absl::StatusOr<GeoIndReport> r =
        AuditDeltaPrunable(MakeMatrix(rows), Table(k, d), eps, delta, 1e-12);
    ASSERT_TRUE(r.ok());
    EXPECT_EQ(r->count(), 0) << trial;
  }
  EXPECT_GE(checked, 30);
}

TEST(MeanAbsoluteDifferenceTest, HandValue) {
  const ObfuscationMatrix a = MakeMatrix({{1.0, 0.0}, {0.0, 1.0}});
  const ObfuscationMatrix b = MakeMatrix({{0.5, 0.5}, {0.0, 1.0}});
  EXPECT_DOUBLE_EQ(MeanAbsoluteDifference(a, b), 0.25);
  EXPECT_DOUBLE_EQ(MeanAbsoluteDifference(a, a), 0.0);
}

}  // namespace
}  // namespace treeobf
