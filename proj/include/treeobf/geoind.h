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
#ifndef TREEOBF_GEOIND_H_
#define TREEOBF_GEOIND_H_

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/spatial_index.h"

namespace treeobf {

inline constexpr double kRowSumTolerance = 1e-9;
inline constexpr double kDefaultAuditTolerance = 1e-6;

// Row-stochastic K x K matrix over an ordered list of same-level nodes.
// Row i is the true location node_ids[i], column j the reported one.
class ObfuscationMatrix {
 public:
  ObfuscationMatrix() = default;  // empty 0 x 0

  // Fails unless every entry is finite and >= 0 and each row sums to one
  // within kRowSumTolerance.
  static absl::StatusOr<ObfuscationMatrix> Create(
      int level, std::vector<CellId> node_ids,
      std::vector<std::vector<double>> rows);
  static ObfuscationMatrix Identity(int level, std::vector<CellId> node_ids);
  static ObfuscationMatrix Uniform(int level, std::vector<CellId> node_ids);

  static absl::StatusOr<ObfuscationMatrix> FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;

  int level() const { return level_; }
  int size() const { return static_cast<int>(node_ids_.size()); }
  const std::vector<CellId>& node_ids() const { return node_ids_; }
  double at(int i, int j) const { return data_[i * size() + j]; }
  std::span<const double> row(int i) const {
    return {data_.data() + i * size(), static_cast<size_t>(size())};
  }
  // Position of `id` in node_ids(), or -1.
  int IndexOf(const CellId& id) const;

  // Largest |row sum - 1|.
  double MaxRowSumError() const;

  friend bool operator==(const ObfuscationMatrix&,
                         const ObfuscationMatrix&) = default;

 private:
  ObfuscationMatrix(int level, std::vector<CellId> ids, std::vector<double> data)
      : level_(level), node_ids_(std::move(ids)), data_(std::move(data)) {}

  int level_ = 0;
  std::vector<CellId> node_ids_;
  std::vector<double> data_;  // row-major
};

// Pairwise distances d_{i,j} among an ordered node list.
class DistanceTable {
 public:
  // Row-major K x K values; must be symmetric with a zero diagonal.
  static absl::StatusOr<DistanceTable> FromValues(int size,
                                                  std::vector<double> values);
  // Uses LocationTree::Distance, so all ids must share a level.
  static absl::StatusOr<DistanceTable> ForNodes(const LocationTree& tree,
                                                std::span<const CellId> ids);

  int size() const { return size_; }
  double at(int i, int j) const { return values_[i * size_ + j]; }

 private:
  DistanceTable(int size, std::vector<double> values)
      : size_(size), values_(std::move(values)) {}

  int size_ = 0;
  std::vector<double> values_;
};

struct GeoIndViolation {
  int i = 0;
  int j = 0;
  int k = 0;
  double slack = 0.0;

  friend bool operator==(const GeoIndViolation&,
                         const GeoIndViolation&) = default;
};

struct GeoIndReport {
  double epsilon = 0.0;
  double tolerance = kDefaultAuditTolerance;
  // Sorted by (i, j, k); every slack exceeds `tolerance`.
  std::vector<GeoIndViolation> violations;

  int count() const { return static_cast<int>(violations.size()); }
  double max_slack() const;
  nlohmann::json ToJson() const;
};

// Flags z_ik - exp(epsilon * d_ij) * z_jk > tolerance over all ordered
// pairs i != j and columns k.
GeoIndReport AuditGeoInd(const ObfuscationMatrix& z, const DistanceTable& d,
                         double epsilon,
                         double tolerance = kDefaultAuditTolerance);
absl::StatusOr<GeoIndReport> AuditGeoInd(
    const ObfuscationMatrix& z, const LocationTree& tree, double epsilon,
    double tolerance = kDefaultAuditTolerance);

// Distance-free form z_ik - exp(epsilon) * z_jk <= tolerance.
GeoIndReport AuditGeoIndConstant(const ObfuscationMatrix& z, double epsilon,
                                 double tolerance = kDefaultAuditTolerance);

// Exhaustive check that removing any set S of at most `delta` columns (and
// the matching rows) and renormalizing leaves the matrix epsilon-Geo-Ind.
// Subsets under which some surviving row loses all of its mass are skipped.
// A triple violated under several subsets is reported once with its
// largest slack. Costs O(C(K, <=delta) * K^3).
absl::StatusOr<GeoIndReport> AuditDeltaPrunable(
    const ObfuscationMatrix& z, const DistanceTable& d, double epsilon,
    int delta, double tolerance = kDefaultAuditTolerance);

// Calls fn for every subset of {0..n-1} of size 0..max_size, smaller sizes
// first, each size in lexicographic order.
void ForEachSubset(int n, int max_size,
                   const std::function<void(std::span<const int>)>& fn);

struct TargetSet {
  std::vector<CellId> targets;

  absl::Status Validate(const LocationTree& tree) const;
};

// |d(real, target) - d(obf, target)|. Uses the tree metric when all three
// share a level, centroid distance otherwise.
absl::StatusOr<double> UtilityError(const LocationTree& tree,
                                    const CellId& real, const CellId& obf,
                                    const CellId& target);

// c_ij such that the expected loss of Z is sum_ij c_ij z_ij: the
// renormalized prior of row i times the target-averaged utility error.
absl::StatusOr<std::vector<double>> LossCoefficients(
    const LocationTree& tree, std::span<const CellId> node_ids,
    std::span<const double> priors, const TargetSet& targets);

absl::StatusOr<double> ExpectedLoss(const ObfuscationMatrix& z,
                                    const LocationTree& tree,
                                    std::span<const double> priors,
                                    const TargetSet& targets);

}  // namespace treeobf

#endif  // TREEOBF_GEOIND_H_
