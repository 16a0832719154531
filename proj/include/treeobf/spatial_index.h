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
#ifndef TREEOBF_SPATIAL_INDEX_H_
#define TREEOBF_SPATIAL_INDEX_H_

#include <compare>
#include <cstdint>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/checkins.h"

namespace treeobf {

// Identifier of a node in a location tree. Synthetic ids look like
// "n-2-07": a root "n" followed by one fixed-width child index per level,
// so the parent id is the child id minus its last segment and lexicographic
// order among same-level ids follows the layout order.
class CellId {
 public:
  CellId() = default;
  explicit CellId(std::string value) : value_(std::move(value)) {}

  const std::string& str() const { return value_; }
  bool empty() const { return value_.empty(); }

  friend auto operator<=>(const CellId&, const CellId&) = default;
  friend std::ostream& operator<<(std::ostream& os, const CellId& id) {
    return os << id.value_;
  }

 private:
  std::string value_;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

enum class DistanceMetric { kEuclidean, kHop };

absl::StatusOr<DistanceMetric> ParseDistanceMetric(std::string_view name);
const char* DistanceMetricName(DistanceMetric metric);

using AttributeValue = std::variant<bool, double>;

struct TreeNode {
  CellId id;
  int level = 0;
  Point centroid;
  // Width and height of the axis-aligned cell; the cell is
  // [centroid - extent/2, centroid + extent/2).
  Point extent;
  CellId parent;  // empty for the root
  std::vector<CellId> children;
  double prior = 0.0;
  std::map<std::string, AttributeValue> attributes;

  bool is_leaf() const { return level == 0; }
  bool Contains(const Point& p) const;
};

struct TreeConfig {
  int branching = 4;
  int height = 2;
  double cell_size = 1.0;
  Point origin;  // lower-left corner of the region
  DistanceMetric metric = DistanceMetric::kEuclidean;
  int64_t max_leaves = 65536;
};

// Balanced rooted tree of disjoint cells. Level 0 holds the leaves, level H
// the root. Immutable once built or ingested, apart from attribute tagging
// done before the tree is shared.
class LocationTree {
 public:
  // Square-grid k-ary partition. Children of a node form a rows x cols
  // block (rows the largest divisor of `branching` not above its square
  // root); the block is transposed on alternate levels so that non-square
  // branchings still cover two dimensions. Leaf priors start uniform.
  static absl::StatusOr<LocationTree> BuildSynthetic(const TreeConfig& config);

  // Loads the structured-text form written by ToJson, including trees
  // built by external tools. The result is validated.
  static absl::StatusOr<LocationTree> FromJson(const nlohmann::json& json);
  static absl::StatusOr<LocationTree> Parse(std::string_view text);

  nlohmann::json ToJson() const;
  // Canonical text form; byte-identical for identical trees.
  std::string Serialize() const;
  // Hex SHA-256 of Serialize().
  std::string Hash() const;

  absl::Status Validate() const;

  const CellId& root() const { return root_; }
  int height() const { return static_cast<int>(levels_.size()) - 1; }
  const TreeConfig& config() const { return config_; }
  DistanceMetric metric() const { return config_.metric; }
  size_t size() const { return nodes_.size(); }

  bool Contains(const CellId& id) const { return nodes_.count(id) > 0; }
  // Null when absent.
  const TreeNode* Find(const CellId& id) const;
  absl::StatusOr<const TreeNode*> Get(const CellId& id) const;

  // V^level in lexicographic id order.
  absl::StatusOr<std::vector<CellId>> NodesAtLevel(int level) const;
  const std::vector<CellId>& leaves() const { return levels_.front(); }

  // Ancestor of `leaf` at `level` (the leaf itself for level 0).
  absl::StatusOr<CellId> FindSubtree(const CellId& leaf, int level) const;
  // Ancestor of any node at a level at or above its own.
  absl::StatusOr<CellId> Ancestor(const CellId& node, int level) const;

  // Leaves below `node` in lexicographic order.
  absl::StatusOr<std::vector<CellId>> LeavesUnder(const CellId& node) const;

  // Distance between two nodes of the same level under the tree's metric.
  absl::StatusOr<double> Distance(const CellId& a, const CellId& b) const;
  // Euclidean distance between centroids, for nodes at any levels.
  absl::StatusOr<double> CentroidDistance(const CellId& a,
                                          const CellId& b) const;

  // Leaf containing `p`, or NotFound outside the region.
  absl::StatusOr<CellId> LocateLeaf(const Point& p) const;

  absl::Status SetAttribute(const CellId& id, const std::string& name,
                            AttributeValue value);
  // Applies {"<cell id>": {"<name>": value, ...}, ...}.
  absl::Status ApplyAttributeTable(const nlohmann::json& table);

  // Replaces leaf priors (aligned with leaves()) and re-aggregates.
  absl::Status SetLeafPriors(std::span<const double> priors);

 private:
  friend absl::StatusOr<LocationTree> IngestCheckIns(
      const LocationTree& tree, std::span<const CheckInRecord> records,
      const GeoAffine& mapping, IngestStats* stats);

  LocationTree() = default;
  void RebuildLevels();
  void AggregatePriors();

  TreeConfig config_;
  CellId root_;
  std::map<CellId, TreeNode> nodes_;
  std::vector<std::vector<CellId>> levels_;
};

// Counts check-ins per leaf and turns the counts into priors. Leaves with
// no check-ins are dropped, along with any internal node left childless.
// Records outside the region are skipped and counted in `stats`.
absl::StatusOr<LocationTree> IngestCheckIns(
    const LocationTree& tree, std::span<const CheckInRecord> records,
    const GeoAffine& mapping = {}, IngestStats* stats = nullptr);

// Leaf priors for `leaves`, renormalized to sum to one.
absl::StatusOr<std::vector<double>> SubtreePriors(
    const LocationTree& tree, std::span<const CellId> leaves);

}  // namespace treeobf

#endif  // TREEOBF_SPATIAL_INDEX_H_
