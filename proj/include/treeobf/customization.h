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
#ifndef TREEOBF_CUSTOMIZATION_H_
#define TREEOBF_CUSTOMIZATION_H_

#include <span>
#include <string>
#include <vector>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/geoind.h"
#include "treeobf/spatial_index.h"

namespace treeobf {

enum class CompareOp { kEq, kNe, kLt, kGt, kGe, kLe };

absl::StatusOr<CompareOp> ParseCompareOp(std::string_view text);
const char* CompareOpSymbol(CompareOp op);

// <var, op, val>. The attribute "distance" is built in and measured from
// the user's real location.
struct Predicate {
  std::string var;
  CompareOp op = CompareOp::kEq;
  AttributeValue val = false;
};

struct Policy {
  int privacy_level = 1;
  int precision_level = 0;
  std::vector<Predicate> preferences;

  static absl::StatusOr<Policy> FromJson(const nlohmann::json& j);
  nlohmann::json ToJson() const;
};

// Checks the levels against the tree. Returns notes about legal but
// unusual settings, such as a precision level equal to the privacy level.
absl::StatusOr<std::vector<std::string>> ValidatePolicy(
    const Policy& policy, const LocationTree& tree);

using PruneSet = std::vector<CellId>;

struct PolicyFailure {
  CellId leaf;
  int first_failed = 0;  // index into the preference list
};

// Every leaf that fails at least one predicate, except the real location,
// in lexicographic order together with the first predicate it failed.
absl::StatusOr<std::vector<PolicyFailure>> EvalPolicyDetailed(
    std::span<const CellId> subtree_leaves, const LocationTree& tree,
    const CellId& real, std::span<const Predicate> preferences);

absl::StatusOr<PruneSet> EvalPolicy(std::span<const CellId> subtree_leaves,
                                    const LocationTree& tree,
                                    const CellId& real,
                                    std::span<const Predicate> preferences);

enum class OverflowMode {
  // Prune every failing leaf even past delta.
  kEnforcePolicy,
  // Prune at most delta leaves, earliest failed predicate first, then by id.
  kEnforcePrivacy,
};

absl::StatusOr<OverflowMode> ParseOverflowMode(std::string_view name);
const char* OverflowModeName(OverflowMode mode);

struct OverflowResolution {
  PruneSet prune;
  // Failing leaves kept in the matrix.
  int policy_violations = 0;
};

OverflowResolution ResolveOverflow(std::span<const PolicyFailure> failures,
                                   int delta, OverflowMode mode);

// Removes the rows and columns of `prune` and divides each surviving row by
// its surviving mass. Fails with FailedPrecondition when some surviving row
// keeps no mass; see IsPruningInfeasible.
absl::StatusOr<ObfuscationMatrix> PruneMatrix(const ObfuscationMatrix& z,
                                              std::span<const CellId> prune);

bool IsPruningInfeasible(const absl::Status& status);

// Bayes aggregation to `target_level`:
//   z'_ij = sum_{m in N(i)} p_m sum_{n in N(j)} z_mn / sum_{m in N(i)} p_m,
// where N(i) holds the rows of z below target node i and p are the tree
// priors of z's nodes. Works on pruned matrices, in which case only
// surviving nodes contribute and ancestors with none are dropped. Output
// nodes are in lexicographic order.
//
// `subtree_level` is the level of the subtree the matrix was built for and
// caps `target_level`. When negative it is taken to be the level of the
// nodes' lowest common ancestor, which understates it once pruning has
// removed a branch.
absl::StatusOr<ObfuscationMatrix> ReducePrecision(const ObfuscationMatrix& z,
                                                  const LocationTree& tree,
                                                  int target_level,
                                                  int subtree_level = -1);

}  // namespace treeobf

#endif  // TREEOBF_CUSTOMIZATION_H_
