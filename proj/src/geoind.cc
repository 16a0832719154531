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

#include <algorithm>
#include <cmath>
#include <limits>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

// Row masses at or above this are treated as fully pruned.
constexpr double kFullMass = 1.0 - 1e-12;

absl::StatusOr<double> DistanceToTarget(const LocationTree& tree,
                                        const CellId& node,
                                        const CellId& target) {
  absl::StatusOr<const TreeNode*> a = tree.Get(node);
  if (!a.ok()) return a.status();
  absl::StatusOr<const TreeNode*> b = tree.Get(target);
  if (!b.ok()) return b.status();
  if ((*a)->level == (*b)->level) return tree.Distance(node, target);
  return tree.CentroidDistance(node, target);
}

}  // namespace

absl::StatusOr<ObfuscationMatrix> ObfuscationMatrix::Create(
    int level, std::vector<CellId> node_ids,
    std::vector<std::vector<double>> rows) {
  const size_t k = node_ids.size();
  if (rows.size() != k) {
    return absl::InvalidArgumentError(
        absl::StrFormat("%d rows for %d nodes", rows.size(), k));
  }
  std::vector<CellId> sorted = node_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    return absl::InvalidArgumentError("duplicate node id in matrix");
  }
  std::vector<double> data;
  data.reserve(k * k);
  for (size_t i = 0; i < k; ++i) {
    if (rows[i].size() != k) {
      return absl::InvalidArgumentError(
          absl::StrFormat("row %d has %d entries, expected %d", i,
                          rows[i].size(), k));
    }
    double sum = 0.0;
    for (size_t j = 0; j < k; ++j) {
      const double v = rows[i][j];
      if (!std::isfinite(v) || v < 0.0) {
        return absl::InvalidArgumentError(
            absl::StrFormat("entry (%d, %d) = %g is not a probability", i, j, v));
      }
      sum += v;
      data.push_back(v);
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      return absl::InvalidArgumentError(
          absl::StrFormat("row %d sums to %.17g", i, sum));
    }
  }
  return ObfuscationMatrix(level, std::move(node_ids), std::move(data));
}

ObfuscationMatrix ObfuscationMatrix::Identity(int level,
                                              std::vector<CellId> node_ids) {
  const size_t k = node_ids.size();
  std::vector<double> data(k * k, 0.0);
  for (size_t i = 0; i < k; ++i) data[i * k + i] = 1.0;
  return ObfuscationMatrix(level, std::move(node_ids), std::move(data));
}

ObfuscationMatrix ObfuscationMatrix::Uniform(int level,
                                             std::vector<CellId> node_ids) {
  const size_t k = node_ids.size();
  std::vector<double> data(k * k, k == 0 ? 0.0 : 1.0 / static_cast<double>(k));
  return ObfuscationMatrix(level, std::move(node_ids), std::move(data));
}

int ObfuscationMatrix::IndexOf(const CellId& id) const {
  auto it = std::find(node_ids_.begin(), node_ids_.end(), id);
  return it == node_ids_.end() ? -1
                                : static_cast<int>(it - node_ids_.begin());
}

double ObfuscationMatrix::MaxRowSumError() const {
  double worst = 0.0;
  for (int i = 0; i < size(); ++i) {
    double sum = 0.0;
    for (double v : row(i)) sum += v;
    worst = std::max(worst, std::abs(sum - 1.0));
  }
  return worst;
}

json ObfuscationMatrix::ToJson() const {
  json ids = json::array();
  for (const CellId& id : node_ids_) ids.push_back(id.str());
  json rows = json::array();
  for (int i = 0; i < size(); ++i) {
    rows.push_back(std::vector<double>(row(i).begin(), row(i).end()));
  }
  return {{"level", level_}, {"node_ids", ids}, {"rows", rows}};
}

absl::StatusOr<ObfuscationMatrix> ObfuscationMatrix::FromJson(const json& j) {
  try {
    std::vector<CellId> ids;
    for (const json& id : j.at("node_ids")) {
      ids.emplace_back(id.get<std::string>());
    }
    return Create(j.at("level").get<int>(), std::move(ids),
                  j.at("rows").get<std::vector<std::vector<double>>>());
  } catch (const json::exception& e) {
    return absl::InvalidArgumentError(
        absl::StrCat("malformed matrix: ", e.what()));
  }
}

absl::StatusOr<DistanceTable> DistanceTable::FromValues(
    int size, std::vector<double> values) {
  if (size < 0 || values.size() != static_cast<size_t>(size) * size) {
    return absl::InvalidArgumentError("distance table has the wrong shape");
  }
  for (int i = 0; i < size; ++i) {
    if (values[i * size + i] != 0.0) {
      return absl::InvalidArgumentError("distance diagonal must be zero");
    }
    for (int j = 0; j < size; ++j) {
      const double v = values[i * size + j];
      if (!std::isfinite(v) || v < 0.0 || v != values[j * size + i]) {
        return absl::InvalidArgumentError(absl::StrFormat(
            "distance (%d, %d) must be finite, non-negative and symmetric", i,
            j));
      }
    }
  }
  return DistanceTable(size, std::move(values));
}

absl::StatusOr<DistanceTable> DistanceTable::ForNodes(
    const LocationTree& tree, std::span<const CellId> ids) {
  const int k = static_cast<int>(ids.size());
  std::vector<double> values(static_cast<size_t>(k) * k, 0.0);
  for (int i = 0; i < k; ++i) {
    for (int j = i + 1; j < k; ++j) {
      absl::StatusOr<double> d = tree.Distance(ids[i], ids[j]);
      if (!d.ok()) return d.status();
      values[i * k + j] = values[j * k + i] = *d;
    }
  }
  return DistanceTable(k, std::move(values));
}

double GeoIndReport::max_slack() const {
  double worst = 0.0;
  for (const GeoIndViolation& v : violations) worst = std::max(worst, v.slack);
  return worst;
}

json GeoIndReport::ToJson() const {
  json list = json::array();
  for (const GeoIndViolation& v : violations) {
    list.push_back({v.i, v.j, v.k, v.slack});
  }
  return {{"epsilon", epsilon},
          {"tolerance", tolerance},
          {"count", count()},
          {"max_slack", max_slack()},
          {"violations", list}};
}

GeoIndReport AuditGeoInd(const ObfuscationMatrix& z, const DistanceTable& d,
                         double epsilon, double tolerance) {
  GeoIndReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  const int k = z.size();
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      const double factor = std::exp(epsilon * d.at(i, j));
      if (std::isinf(factor)) continue;
      for (int c = 0; c < k; ++c) {
        const double slack = z.at(i, c) - factor * z.at(j, c);
        if (slack > tolerance) report.violations.push_back({i, j, c, slack});
      }
    }
  }
  return report;
}

absl::StatusOr<GeoIndReport> AuditGeoInd(const ObfuscationMatrix& z,
                                         const LocationTree& tree,
                                         double epsilon, double tolerance) {
  absl::StatusOr<DistanceTable> d = DistanceTable::ForNodes(tree, z.node_ids());
  if (!d.ok()) return d.status();
  return AuditGeoInd(z, *d, epsilon, tolerance);
}

GeoIndReport AuditGeoIndConstant(const ObfuscationMatrix& z, double epsilon,
                                 double tolerance) {
  GeoIndReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  const double factor = std::exp(epsilon);
  if (std::isinf(factor)) return report;
  const int k = z.size();
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      for (int c = 0; c < k; ++c) {
        const double slack = z.at(i, c) - factor * z.at(j, c);
        if (slack > tolerance) report.violations.push_back({i, j, c, slack});
      }
    }
  }
  return report;
}

void ForEachSubset(int n, int max_size,
                   const std::function<void(std::span<const int>)>& fn) {
  std::vector<int> subset;
  for (int size = 0; size <= std::min(n, max_size); ++size) {
    subset.resize(size);
    for (int p = 0; p < size; ++p) subset[p] = p;
    while (true) {
      fn(subset);
      int p = size - 1;
      while (p >= 0 && subset[p] == n - size + p) --p;
      if (p < 0) break;
      ++subset[p];
      for (int q = p + 1; q < size; ++q) subset[q] = subset[q - 1] + 1;
    }
  }
}

absl::StatusOr<GeoIndReport> AuditDeltaPrunable(const ObfuscationMatrix& z,
                                                const DistanceTable& d,
                                                double epsilon, int delta,
                                                double tolerance) {
  const int k = z.size();
  if (delta < 0 || delta >= k) {
    return absl::InvalidArgumentError(
        absl::StrFormat("delta %d must lie in [0, %d)", delta, k));
  }
  if (d.size() != k) {
    return absl::InvalidArgumentError("distance table does not match matrix");
  }
  constexpr double kNone = -std::numeric_limits<double>::infinity();
  std::vector<double> worst(static_cast<size_t>(k) * k * k, kNone);
  std::vector<char> removed(k, 0);
  std::vector<double> mass(k, 0.0);

  ForEachSubset(k, delta, [&](std::span<const int> subset) {
    for (int s : subset) removed[s] = 1;
    bool feasible = true;
    for (int i = 0; i < k; ++i) {
      mass[i] = 0.0;
      for (int s : subset) mass[i] += z.at(i, s);
      if (!removed[i] && mass[i] >= kFullMass) feasible = false;
    }
    if (feasible) {
      for (int i = 0; i < k; ++i) {
        if (removed[i]) continue;
        const double ni = 1.0 - mass[i];
        for (int j = 0; j < k; ++j) {
          if (j == i || removed[j]) continue;
          const double factor = std::exp(epsilon * d.at(i, j));
          if (std::isinf(factor)) continue;
          const double nj = 1.0 - mass[j];
          for (int c = 0; c < k; ++c) {
            if (removed[c]) continue;
            const double slack = z.at(i, c) / ni - factor * (z.at(j, c) / nj);
            double& w = worst[(static_cast<size_t>(i) * k + j) * k + c];
            if (slack > tolerance && slack > w) w = slack;
          }
        }
      }
    }
    for (int s : subset) removed[s] = 0;
  });

  GeoIndReport report;
  report.epsilon = epsilon;
  report.tolerance = tolerance;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      for (int c = 0; c < k; ++c) {
        const double w = worst[(static_cast<size_t>(i) * k + j) * k + c];
        if (w != kNone) report.violations.push_back({i, j, c, w});
      }
    }
  }
  return report;
}

absl::Status TargetSet::Validate(const LocationTree& tree) const {
  if (targets.empty()) return absl::InvalidArgumentError("empty target set");
  for (const CellId& t : targets) {
    const TreeNode* node = tree.Find(t);
    if (node == nullptr || !node->is_leaf()) {
      return absl::InvalidArgumentError(
          absl::StrCat("target ", t.str(), " is not a leaf of the tree"));
    }
  }
  return absl::OkStatus();
}

absl::StatusOr<double> UtilityError(const LocationTree& tree,
                                    const CellId& real, const CellId& obf,
                                    const CellId& target) {
  absl::StatusOr<double> a = DistanceToTarget(tree, real, target);
  if (!a.ok()) return a.status();
  absl::StatusOr<double> b = DistanceToTarget(tree, obf, target);
  if (!b.ok()) return b.status();
  return std::abs(*a - *b);
}

absl::StatusOr<std::vector<double>> LossCoefficients(
    const LocationTree& tree, std::span<const CellId> node_ids,
    std::span<const double> priors, const TargetSet& targets) {
  if (auto s = targets.Validate(tree); !s.ok()) return s;
  const size_t k = node_ids.size();
  if (priors.size() != k) {
    return absl::InvalidArgumentError(
        absl::StrFormat("%d priors for %d nodes", priors.size(), k));
  }
  double total = 0.0;
  for (double p : priors) {
    if (!std::isfinite(p) || p < 0.0) {
      return absl::InvalidArgumentError("priors must be non-negative");
    }
    total += p;
  }
  if (!(total > 0.0) || total > 1.0 + kRowSumTolerance) {
    return absl::InvalidArgumentError(
        absl::StrFormat("priors sum to %.17g, expected (0, 1]", total));
  }

  const size_t q = targets.targets.size();
  std::vector<double> to_target(k * q);
  for (size_t i = 0; i < k; ++i) {
    for (size_t t = 0; t < q; ++t) {
      absl::StatusOr<double> d =
          DistanceToTarget(tree, node_ids[i], targets.targets[t]);
      if (!d.ok()) return d.status();
      to_target[i * q + t] = *d;
    }
  }
  std::vector<double> coefficients(k * k, 0.0);
  for (size_t i = 0; i < k; ++i) {
    const double weight = priors[i] / total / static_cast<double>(q);
    for (size_t j = 0; j < k; ++j) {
      double sum = 0.0;
      for (size_t t = 0; t < q; ++t) {
        sum += std::abs(to_target[i * q + t] - to_target[j * q + t]);
      }
      coefficients[i * k + j] = weight * sum;
    }
  }
  return coefficients;
}

absl::StatusOr<double> ExpectedLoss(const ObfuscationMatrix& z,
                                    const LocationTree& tree,
                                    std::span<const double> priors,
                                    const TargetSet& targets) {
  absl::StatusOr<std::vector<double>> c =
      LossCoefficients(tree, z.node_ids(), priors, targets);
  if (!c.ok()) return c.status();
  const int k = z.size();
  double loss = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) loss += (*c)[i * k + j] * z.at(i, j);
  }
  return loss;
}

}  // namespace treeobf
