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
#include "treeobf/geoind.h"

#include <cmath>
#include <map>
#include <random>
#include <tuple>
#include <vector>

#include "gtest/gtest.h"
#include "test_support.h"

namespace treeobf {
namespace {

using testing::MakeMatrix;
using testing::OraclePrune;
using testing::OracleViolations;
using testing::RandomGeoInd;
using testing::RandomMetric;
using testing::RandomStochastic;
using testing::RestrictMetric;
using testing::Rows;

DistanceTable Table(int k, const std::vector<double>& d) {
  absl::StatusOr<DistanceTable> t = DistanceTable::FromValues(k, d);
  EXPECT_TRUE(t.ok()) << t.status();
  return *std::move(t);
}

LocationTree Grid(int branching, double cell_size) {
  TreeConfig config;
  config.branching = branching;
  config.height = 1;
  config.cell_size = cell_size;
  return *LocationTree::BuildSynthetic(config);
}

CellId LeafAt(const LocationTree& tree, double x, double y) {
  return *tree.LocateLeaf({x, y});
}

TEST(ObfuscationMatrixTest, CreateValidates) {
  const std::vector<CellId> ids = testing::Ids(2);
  EXPECT_TRUE(ObfuscationMatrix::Create(0, ids, {{0.5, 0.5}, {1.0, 0.0}}).ok());
  EXPECT_TRUE(
      ObfuscationMatrix::Create(0, ids, {{0.5, 0.5 + 5e-10}, {1.0, 0.0}}).ok());
  EXPECT_FALSE(
      ObfuscationMatrix::Create(0, ids, {{0.5, 0.5 + 1e-8}, {1.0, 0.0}}).ok());
  EXPECT_FALSE(ObfuscationMatrix::Create(0, ids, {{1.5, -0.5}, {1.0, 0.0}}).ok());
  EXPECT_FALSE(
      ObfuscationMatrix::Create(0, ids, {{std::nan(""), 1.0}, {1.0, 0.0}}).ok());
  EXPECT_FALSE(ObfuscationMatrix::Create(0, ids, {{1.0}, {1.0, 0.0}}).ok());
  EXPECT_FALSE(ObfuscationMatrix::Create(0, {ids[0], ids[0]},
                                         {{0.5, 0.5}, {0.5, 0.5}})
                   .ok());
}

TEST(ObfuscationMatrixTest, JsonRoundTripIsExact) {
  std::mt19937_64 rng(5);
  const ObfuscationMatrix z = MakeMatrix(RandomStochastic(6, rng), 1);
  absl::StatusOr<ObfuscationMatrix> back =
      ObfuscationMatrix::FromJson(nlohmann::json::parse(z.ToJson().dump()));
  ASSERT_TRUE(back.ok()) << back.status();
  EXPECT_EQ(*back, z);
  EXPECT_EQ(back->level(), 1);
  EXPECT_FALSE(ObfuscationMatrix::FromJson({{"level", 0}}).ok());
}

TEST(DistanceTableTest, Validation) {
  EXPECT_FALSE(DistanceTable::FromValues(2, {0, 1, 2, 0}).ok());
  EXPECT_FALSE(DistanceTable::FromValues(2, {1, 1, 1, 0}).ok());
  EXPECT_FALSE(DistanceTable::FromValues(2, {0, 1, 1}).ok());
  const LocationTree tree = Grid(4, 1.0);
  const std::vector<CellId> mixed = {tree.leaves()[0], tree.root()};
  EXPECT_FALSE(DistanceTable::ForNodes(tree, mixed).ok());
}

TEST(AuditGeoIndTest, UniformHasNoViolations) {
  for (double eps : {0.0, 0.1, 5.0}) {
    const ObfuscationMatrix z = ObfuscationMatrix::Uniform(0, testing::Ids(4));
    std::mt19937_64 rng(1);
    EXPECT_EQ(AuditGeoInd(z, Table(4, RandomMetric(4, rng)), eps).count(), 0);
  }
}

TEST(AuditGeoIndTest, IdentityViolatesBothDirections) {
  const ObfuscationMatrix z = ObfuscationMatrix::Identity(0, testing::Ids(2));
  const GeoIndReport report = AuditGeoInd(z, Table(2, {0, 1, 1, 0}), 3.0);
  ASSERT_EQ(report.count(), 2);
  EXPECT_EQ(report.violations[0], (GeoIndViolation{0, 1, 0, 1.0}));
  EXPECT_EQ(report.violations[1], (GeoIndViolation{1, 0, 1, 1.0}));
}

TEST(AuditGeoIndTest, HandComputedSlack) {
  const ObfuscationMatrix z = MakeMatrix({{0.7, 0.3}, {0.3, 0.7}});
  const GeoIndReport report = AuditGeoInd(z, Table(2, {0, 1, 1, 0}), 0.5);
  ASSERT_EQ(report.count(), 2);
  const double slack = 0.7 - std::exp(0.5) * 0.3;
  EXPECT_EQ(report.violations[0].i, 0);
  EXPECT_EQ(report.violations[0].j, 1);
  EXPECT_EQ(report.violations[0].k, 0);
  EXPECT_NEAR(report.violations[0].slack, slack, 1e-15);
  EXPECT_NEAR(report.max_slack(), slack, 1e-15);
  EXPECT_EQ(report.ToJson()["count"], 2);
}

TEST(AuditGeoIndTest, EmptyMatrixAndInfiniteBudget) {
  EXPECT_EQ(AuditGeoInd(ObfuscationMatrix(), Table(0, {}), 1.0).count(), 0);
  const ObfuscationMatrix z = ObfuscationMatrix::Identity(0, testing::Ids(2));
  EXPECT_EQ(AuditGeoInd(z, Table(2, {0, 1, 1, 0}), INFINITY).count(), 0);
}

TEST(AuditGeoIndTest, TreeOverloadUsesTreeDistances) {
  const LocationTree tree = Grid(4, 1.0);
  const ObfuscationMatrix z = ObfuscationMatrix::Identity(0, tree.leaves());
  absl::StatusOr<GeoIndReport> report = AuditGeoInd(z, tree, 1.0);
  ASSERT_TRUE(report.ok());
  EXPECT_EQ(report->count(), 12);
  const ObfuscationMatrix foreign =
      ObfuscationMatrix::Identity(0, testing::Ids(2));
  EXPECT_FALSE(AuditGeoInd(foreign, tree, 1.0).ok());
}

TEST(AuditGeoIndPropertyTest, MatchesOracleAndIsSorted) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const int k = testing::Between(rng, 2, 8);
    const std::vector<double> d = RandomMetric(k, rng);
    const Rows rows = trial % 2 ? RandomStochastic(k, rng)
                                : RandomGeoInd(k, d, 3.0, rng);
    const double eps = 4.0 * testing::Unit(rng);
    const GeoIndReport report = AuditGeoInd(MakeMatrix(rows), Table(k, d), eps);
    EXPECT_EQ(report.count(), OracleViolations(rows, d, eps, 1e-6));
    for (size_t v = 1; v < report.violations.size(); ++v) {
      const auto& a = report.violations[v - 1];
      const auto& b = report.violations[v];
      EXPECT_LT(std::tie(a.i, a.j, a.k), std::tie(b.i, b.j, b.k));
    }
    for (const auto& v : report.violations) EXPECT_GT(v.slack, 1e-6);
  }
}

TEST(AuditGeoIndPropertyTest, PassingIsMonotoneInEpsilon) {
  std::mt19937_64 rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = testing::Between(rng, 2, 8);
    const std::vector<double> d = RandomMetric(k, rng);
    const double eps = 0.5 + 3.0 * testing::Unit(rng);
    const ObfuscationMatrix z = MakeMatrix(RandomGeoInd(k, d, eps, rng));
    ASSERT_EQ(AuditGeoInd(z, Table(k, d), eps).count(), 0);
    for (double larger : {eps * 1.01, eps * 2, eps * 10}) {
      EXPECT_EQ(AuditGeoInd(z, Table(k, d), larger).count(), 0);
    }
  }
}

TEST(ForEachSubsetTest, OrderAndCount) {
  std::vector<std::vector<int>> seen;
  ForEachSubset(4, 2, [&](std::span<const int> s) {
    seen.emplace_back(s.begin(), s.end());
  });
  const std::vector<std::vector<int>> expected = {
      {}, {0}, {1}, {2}, {3}, {0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};
  EXPECT_EQ(seen, expected);
  int count = 0;
  ForEachSubset(10, 3, [&](std::span<const int>) { ++count; });
  EXPECT_EQ(count, 1 + 10 + 45 + 120);
}

TEST(AuditDeltaPrunableTest, DeltaZeroEqualsPlainAudit) {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 50; ++trial) {
    const int k = testing::Between(rng, 2, 7);
    const std::vector<double> d = RandomMetric(k, rng);
    const ObfuscationMatrix z = MakeMatrix(RandomStochastic(k, rng));
    absl::StatusOr<GeoIndReport> pruned = AuditDeltaPrunable(z, Table(k, d), 1.5, 0);
    ASSERT_TRUE(pruned.ok());
    EXPECT_EQ(pruned->violations, AuditGeoInd(z, Table(k, d), 1.5).violations);
  }
}

TEST(AuditDeltaPrunableTest, UniformIsPrunable) {
  std::mt19937_64 rng(45);
  for (int k = 3; k <= 7; ++k) {
    const ObfuscationMatrix z = ObfuscationMatrix::Uniform(0, testing::Ids(k));
    for (int delta = 0; delta < k - 1; ++delta) {
      absl::StatusOr<GeoIndReport> r =
          AuditDeltaPrunable(z, Table(k, RandomMetric(k, rng)), 0.1, delta);
      ASSERT_TRUE(r.ok());
      EXPECT_EQ(r->count(), 0) << k << " " << delta;
    }
  }
}

TEST(AuditDeltaPrunableTest, RejectsBadDelta) {
  const ObfuscationMatrix z = ObfuscationMatrix::Uniform(0, testing::Ids(3));
  const DistanceTable d = Table(3, {0, 1, 1, 1, 0, 1, 1, 1, 0});
  EXPECT_FALSE(AuditDeltaPrunable(z, d, 1.0, 3).ok());
  EXPECT_FALSE(AuditDeltaPrunable(z, d, 1.0, -1).ok());
}

// Worst renormalized slack per original (i, j, k), over every feasible
// column set of size <= delta.
std::map<std::tuple<int, int, int>, double> OracleDeltaAudit(
    const Rows& z, const std::vector<double>& d, double eps, int delta) {
  const int k = static_cast<int>(z.size());
  std::map<std::tuple<int, int, int>, double> worst;
  for (uint32_t mask = 0; mask < (1u << k); ++mask) {
    if (std::popcount(mask) > delta) continue;
    Rows pruned;
    if (!OraclePrune(z, mask, &pruned)) continue;
    std::vector<int> keep;
    for (int i = 0; i < k; ++i) {
      if (!(mask >> i & 1)) keep.push_back(i);
    }
    const std::vector<double> dd = RestrictMetric(d, k, mask);
    const int n = static_cast<int>(keep.size());
    for (int a = 0; a < n; ++a) {
      for (int b = 0; b < n; ++b) {
        if (a == b) continue;
        for (int c = 0; c < n; ++c) {
          const double slack =
              pruned[a][c] - std::exp(eps * dd[a * n + b]) * pruned[b][c];
          if (slack <= 1e-6) continue;
          auto key = std::make_tuple(keep[a], keep[b], keep[c]);
          auto it = worst.find(key);
          if (it == worst.end() || slack > it->second) worst[key] = slack;
        }
      }
    }
  }
  return worst;
}

TEST(AuditDeltaPrunablePropertyTest, MatchesBitmaskOracle) {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 150; ++trial) {
    const int k = testing::Between(rng, 3, 7);
    const int delta = testing::Between(rng, 0, std::min(3, k - 1));
    const std::vector<double> d = RandomMetric(k, rng);
    const double eps = 1.0 + 3.0 * testing::Unit(rng);
    Rows rows = trial % 3 ? RandomGeoInd(k, d, eps, rng) : RandomStochastic(k, rng);
    if (trial % 10 == 0) rows[0].assign(k, 0.0), rows[0][k - 1] = 1.0;
    const auto oracle = OracleDeltaAudit(rows, d, eps, delta);
    absl::StatusOr<GeoIndReport> report =
        AuditDeltaPrunable(MakeMatrix(rows), Table(k, d), eps, delta);
    ASSERT_TRUE(report.ok());
    ASSERT_EQ(report->count(), static_cast<int>(oracle.size())) << trial;
    int v = 0;
    for (const auto& [key, slack] : oracle) {
      const GeoIndViolation& got = report->violations[v++];
      EXPECT_EQ(std::make_tuple(got.i, got.j, got.k), key);
      EXPECT_NEAR(got.slack, slack, 1e-12);
    }
  }
}

TEST(TargetSetTest, Validate) {
  const LocationTree tree = Grid(4, 1.0);
  EXPECT_FALSE(TargetSet{}.Validate(tree).ok());
  EXPECT_FALSE(TargetSet{{tree.root()}}.Validate(tree).ok());
  EXPECT_FALSE(TargetSet{{CellId("nowhere")}}.Validate(tree).ok());
  EXPECT_TRUE(TargetSet{{tree.leaves()[0]}}.Validate(tree).ok());
}

TEST(UtilityErrorTest, HandCases) {
  const LocationTree tree = Grid(36, 1.0);
  const CellId target = LeafAt(tree, 0.5, 0.5);
  const CellId real = LeafAt(tree, 5.5, 0.5);
  const CellId obf = LeafAt(tree, 3.5, 0.5);
  EXPECT_DOUBLE_EQ(*UtilityError(tree, real, real, target), 0.0);
  EXPECT_DOUBLE_EQ(*UtilityError(tree, real, obf, target), 2.0);
  EXPECT_DOUBLE_EQ(
      *UtilityError(tree, LeafAt(tree, 1.5, 0.5), LeafAt(tree, 0.5, 1.5), target),
      0.0);
}

TEST(ExpectedLossTest, HandCases) {
  const LocationTree tree = Grid(2, 1.0);
  const std::vector<double> priors = {0.5, 0.5};
  const TargetSet targets{{tree.leaves()[0]}};
  const ObfuscationMatrix id = ObfuscationMatrix::Identity(0, tree.leaves());
  EXPECT_DOUBLE_EQ(*ExpectedLoss(id, tree, priors, targets), 0.0);
  absl::StatusOr<ObfuscationMatrix> swap =
      ObfuscationMatrix::Create(0, tree.leaves(), {{0, 1}, {1, 0}});
  ASSERT_TRUE(swap.ok());
  EXPECT_DOUBLE_EQ(*ExpectedLoss(*swap, tree, priors, targets), 1.0);
  EXPECT_FALSE(ExpectedLoss(*swap, tree, priors, TargetSet{}).ok());
  EXPECT_FALSE(ExpectedLoss(*swap, tree, std::vector<double>{0.9, 0.9}, targets).ok());
  EXPECT_FALSE(ExpectedLoss(*swap, tree, std::vector<double>{-0.1, 0.5}, targets).ok());
  // Subtree priors are renormalized.
  EXPECT_DOUBLE_EQ(*ExpectedLoss(*swap, tree, std::vector<double>{0.1, 0.1}, targets), 1.0);
}

double OracleLoss(const LocationTree& tree, const Rows& z,
                  const std::vector<CellId>& ids, const std::vector<double>& p,
                  const TargetSet& targets) {
  double total = 0.0, mass = 0.0;
  for (double v : p) mass += v;
  for (const CellId& t : targets.targets) {
    for (size_t i = 0; i < ids.size(); ++i) {
      for (size_t j = 0; j < ids.size(); ++j) {
        const double err = std::abs(*tree.Distance(ids[i], t) - *tree.Distance(ids[j], t));
        total += p[i] / mass * z[i][j] * err;
      }
    }
  }
  return total / targets.targets.size();
}

TEST(ExpectedLossPropertyTest, MatchesOracleAndScalesWithDistance) {
  std::mt19937_64 rng(47);
  for (int trial = 0; trial < 50; ++trial) {
    const int b = testing::Between(rng, 2, 9);
    const LocationTree small = Grid(b, 1.0);
    const LocationTree large = Grid(b, 3.0);
    const Rows rows = RandomStochastic(b, rng);
    absl::StatusOr<ObfuscationMatrix> z =
        ObfuscationMatrix::Create(0, small.leaves(), rows);
    std::vector<double> p(b);
    for (double& v : p) v = 0.01 + testing::Unit(rng) / b;
    TargetSet targets;
    for (int q = testing::Between(rng, 1, 4); q > 0; --q) {
      targets.targets.push_back(small.leaves()[rng() % b]);
    }
    const double loss = *ExpectedLoss(*z, small, p, targets);
    EXPECT_NEAR(loss, OracleLoss(small, rows, small.leaves(), p, targets), 1e-12);
    EXPECT_NEAR(*ExpectedLoss(*z, large, p, targets), 3.0 * loss, 1e-12);
    absl::StatusOr<std::vector<double>> c =
        LossCoefficients(small, small.leaves(), p, targets);
    ASSERT_TRUE(c.ok());
    double linear = 0.0;
    for (int i = 0; i < b; ++i) {
      for (int j = 0; j < b; ++j) linear += (*c)[i * b + j] * rows[i][j];
    }
    EXPECT_NEAR(linear, loss, 1e-12);
  }
}

}  // namespace
}  // namespace treeobf
