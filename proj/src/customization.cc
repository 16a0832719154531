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
#include "treeobf/customization.h"

#include <algorithm>
#include <map>
#include <optional>

#include "absl/strings/match.h"
#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

constexpr double kFullMass = 1.0 - 1e-12;
constexpr char kDistance[] = "distance";
constexpr char kInfeasiblePrefix[] = "pruning infeasible";

template <typename T>
bool Compare(const T& lhs, CompareOp op, const T& rhs) {
  switch (op) {
    case CompareOp::kEq:
      return lhs == rhs;
    case CompareOp::kNe:
      return lhs != rhs;
    case CompareOp::kLt:
      return lhs < rhs;
    case CompareOp::kGt:
      return lhs > rhs;
    case CompareOp::kGe:
      return lhs >= rhs;
    case CompareOp::kLe:
      return lhs <= rhs;
  }
  return false;
}

// Type of each attribute name in the tree: true for boolean.
absl::StatusOr<std::map<std::string, bool>> AttributeTypes(
    const LocationTree& tree) {
  std::map<std::string, bool> types;
  for (int level = 0; level <= tree.height(); ++level) {
    const std::vector<CellId> ids = *tree.NodesAtLevel(level);
    for (const CellId& id : ids) {
      for (const auto& [name, value] : tree.Find(id)->attributes) {
        const bool is_bool = std::holds_alternative<bool>(value);
        auto [it, inserted] = types.emplace(name, is_bool);
        if (!inserted && it->second != is_bool) {
          return absl::InvalidArgumentError(absl::StrCat(
              "attribute '", name, "' mixes boolean and numeric values"));
        }
      }
    }
  }
  return types;
}

absl::Status CheckPredicate(const Predicate& p,
                            const std::map<std::string, bool>& types) {
  bool is_bool = false;
  if (p.var != kDistance) {
    auto it = types.find(p.var);
    if (it == types.end()) {
      return absl::InvalidArgumentError(
          absl::StrCat("unknown attribute '", p.var, "'"));
    }
    is_bool = it->second;
  }
  if (is_bool != std::holds_alternative<bool>(p.val)) {
    return absl::InvalidArgumentError(absl::StrCat(
        "predicate on '", p.var, "' compares against a value of the wrong type"));
  }
  if (is_bool && p.op != CompareOp::kEq && p.op != CompareOp::kNe) {
    return absl::InvalidArgumentError(absl::StrCat(
        "boolean attribute '", p.var, "' only supports = and !="));
  }
  return absl::OkStatus();
}

}  // namespace

absl::StatusOr<CompareOp> ParseCompareOp(std::string_view text) {
  if (text == "=" || text == "==") return CompareOp::kEq;
  if (text == "!=" || text == "≠") return CompareOp::kNe;
  if (text == "<") return CompareOp::kLt;
  if (text == ">") return CompareOp::kGt;
  if (text == ">=" || text == "≥") return CompareOp::kGe;
  if (text == "<=" || text == "≤") return CompareOp::kLe;
  return absl::InvalidArgumentError(
      absl::StrCat("unknown operator '", std::string(text), "'"));
}

const char* CompareOpSymbol(CompareOp op) {
  switch (op) {
    case CompareOp::kEq:
      return "=";
    case CompareOp::kNe:
      return "!=";
    case CompareOp::kLt:
      return "<";
    case CompareOp::kGt:
      return ">";
    case CompareOp::kGe:
      return ">=";
    case CompareOp::kLe:
      return "<=";
  }
  return "?";
}

absl::StatusOr<Policy> Policy::FromJson(const json& j) {
  try {
    Policy policy;
    policy.privacy_level = j.at("privacy_level").get<int>();
    policy.precision_level = j.at("precision_level").get<int>();
    if (j.contains("preferences")) {
      for (const json& p : j.at("preferences")) {
        Predicate predicate;
        predicate.var = p.at("var").get<std::string>();
        absl::StatusOr<CompareOp> op =
            ParseCompareOp(p.at("op").get<std::string>());
        if (!op.ok()) return op.status();
        predicate.op = *op;
        const json& val = p.at("val");
        if (val.is_boolean()) {
          predicate.val = val.get<bool>();
        } else if (val.is_number()) {
          predicate.val = val.get<double>();
        } else {
          return absl::InvalidArgumentError(
              absl::StrCat("predicate value must be boolean or numeric: ",
                           val.dump()));
        }
        policy.preferences.push_back(std::move(predicate));
      }
    }
    return policy;
  } catch (const json::exception& e) {
    return absl::InvalidArgumentError(absl::StrCat("malformed policy: ", e.what()));
  }
}

json Policy::ToJson() const {
  json prefs = json::array();
  for (const Predicate& p : preferences) {
    prefs.push_back({{"var", p.var},
                     {"op", CompareOpSymbol(p.op)},
                     {"val", std::visit([](auto v) { return json(v); }, p.val)}});
  }
  return {{"privacy_level", privacy_level},
          {"precision_level", precision_level},
          {"preferences", prefs}};
}

absl::StatusOr<std::vector<std::string>> ValidatePolicy(
    const Policy& policy, const LocationTree& tree) {
  if (policy.privacy_level < 0 || policy.privacy_level > tree.height()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "privacy level %d outside [0, %d]", policy.privacy_level,
        tree.height()));
  }
  if (policy.precision_level < 0 ||
      policy.precision_level > policy.privacy_level) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "precision level %d outside [0, %d]", policy.precision_level,
        policy.privacy_level));
  }
  absl::StatusOr<std::map<std::string, bool>> types = AttributeTypes(tree);
  if (!types.ok()) return types.status();
  for (const Predicate& p : policy.preferences) {
    if (auto s = CheckPredicate(p, *types); !s.ok()) return s;
  }
  std::vector<std::string> notes;
  if (policy.precision_level == policy.privacy_level) {
    notes.push_back(
        "precision level equals privacy level: the report is the subtree root");
  }
  return notes;
}

absl::StatusOr<std::vector<PolicyFailure>> EvalPolicyDetailed(
    std::span<const CellId> subtree_leaves, const LocationTree& tree,
    const CellId& real, std::span<const Predicate> preferences) {
  if (std::find(subtree_leaves.begin(), subtree_leaves.end(), real) ==
      subtree_leaves.end()) {
    return absl::InvalidArgumentError(
        absl::StrCat("real location ", real.str(), " is not in the subtree"));
  }
  absl::StatusOr<std::map<std::string, bool>> types = AttributeTypes(tree);
  if (!types.ok()) return types.status();
  for (const Predicate& p : preferences) {
    if (auto s = CheckPredicate(p, *types); !s.ok()) return s;
  }

  std::vector<PolicyFailure> failures;
  for (const CellId& leaf : subtree_leaves) {
    if (leaf == real) continue;
    absl::StatusOr<const TreeNode*> node = tree.Get(leaf);
    if (!node.ok()) return node.status();
    std::optional<int> failed;
    for (size_t p = 0; p < preferences.size() && !failed; ++p) {
      const Predicate& pred = preferences[p];
      bool ok = false;
      if (pred.var == kDistance) {
        absl::StatusOr<double> d = tree.Distance(leaf, real);
        if (!d.ok()) return d.status();
        ok = Compare(*d, pred.op, std::get<double>(pred.val));
      } else if (auto it = (*node)->attributes.find(pred.var);
                 it != (*node)->attributes.end()) {
        ok = std::holds_alternative<bool>(pred.val)
                 ? Compare(std::get<bool>(it->second), pred.op,
                           std::get<bool>(pred.val))
                 : Compare(std::get<double>(it->second), pred.op,
                           std::get<double>(pred.val));
      }
      if (!ok) failed = static_cast<int>(p);
    }
    if (failed) failures.push_back({leaf, *failed});
  }
  std::sort(failures.begin(), failures.end(),
            [](const PolicyFailure& a, const PolicyFailure& b) {
              return a.leaf < b.leaf;
            });
  return failures;
}

absl::StatusOr<PruneSet> EvalPolicy(std::span<const CellId> subtree_leaves,
                                    const LocationTree& tree,
                                    const CellId& real,
                                    std::span<const Predicate> preferences) {
  absl::StatusOr<std::vector<PolicyFailure>> failures =
      EvalPolicyDetailed(subtree_leaves, tree, real, preferences);
  if (!failures.ok()) return failures.status();
  PruneSet prune;
  for (const PolicyFailure& f : *failures) prune.push_back(f.leaf);
  return prune;
}

absl::StatusOr<OverflowMode> ParseOverflowMode(std::string_view name) {
  if (name == "enforce_policy") return OverflowMode::kEnforcePolicy;
  if (name == "enforce_privacy") return OverflowMode::kEnforcePrivacy;
  return absl::InvalidArgumentError(
      absl::StrCat("unknown overflow mode '", std::string(name), "'"));
}

const char* OverflowModeName(OverflowMode mode) {
  return mode == OverflowMode::kEnforcePrivacy ? "enforce_privacy"
                                               : "enforce_policy";
}

OverflowResolution ResolveOverflow(std::span<const PolicyFailure> failures,
                                   int delta, OverflowMode mode) {
  std::vector<PolicyFailure> chosen(failures.begin(), failures.end());
  OverflowResolution result;
  if (mode == OverflowMode::kEnforcePrivacy &&
      static_cast<int>(chosen.size()) > delta) {
    std::sort(chosen.begin(), chosen.end(),
              [](const PolicyFailure& a, const PolicyFailure& b) {
                if (a.first_failed != b.first_failed) {
                  return a.first_failed < b.first_failed;
                }
                return a.leaf < b.leaf;
              });
    result.policy_violations = static_cast<int>(chosen.size()) - delta;
    chosen.resize(std::max(delta, 0));
  }
  for (const PolicyFailure& f : chosen) result.prune.push_back(f.leaf);
  std::sort(result.prune.begin(), result.prune.end());
  return result;
}

absl::StatusOr<ObfuscationMatrix> PruneMatrix(const ObfuscationMatrix& z,
                                              std::span<const CellId> prune) {
  const int k = z.size();
  std::vector<char> removed(k, 0);
  for (const CellId& id : prune) {
    const int index = z.IndexOf(id);
    if (index < 0) {
      return absl::InvalidArgumentError(
          absl::StrCat("cannot prune ", id.str(), ": not in the matrix"));
    }
    removed[index] = 1;
  }
  std::vector<int> keep;
  for (int i = 0; i < k; ++i) {
    if (!removed[i]) keep.push_back(i);
  }
  if (keep.empty()) {
    return absl::InvalidArgumentError("cannot prune every node of the matrix");
  }
  std::vector<CellId> ids;
  std::vector<std::vector<double>> rows;
  for (int i : keep) {
    double mass = 0.0;
    for (int s = 0; s < k; ++s) {
      if (removed[s]) mass += z.at(i, s);
    }
    if (mass >= kFullMass) {
      return absl::FailedPreconditionError(absl::StrFormat(
          "%s: row %s keeps no mass after pruning", kInfeasiblePrefix,
          z.node_ids()[i].str()));
    }
    const double scale = 1.0 - mass;
    std::vector<double> row;
    row.reserve(keep.size());
    for (int j : keep) row.push_back(z.at(i, j) / scale);
    ids.push_back(z.node_ids()[i]);
    rows.push_back(std::move(row));
  }
  return ObfuscationMatrix::Create(z.level(), std::move(ids), std::move(rows));
}

bool IsPruningInfeasible(const absl::Status& status) {
  return absl::IsFailedPrecondition(status) &&
         absl::StartsWith(status.message(), kInfeasiblePrefix);
}

absl::StatusOr<ObfuscationMatrix> ReducePrecision(const ObfuscationMatrix& z,
                                                  const LocationTree& tree,
                                                  int target_level,
                                                  int subtree_level) {
  const int k = z.size();
  if (k == 0) return absl::InvalidArgumentError("empty matrix");
  if (target_level < z.level()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "target level %d is below the matrix level %d", target_level,
        z.level()));
  }
  if (subtree_level > tree.height()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "subtree level %d exceeds the tree height %d", subtree_level,
        tree.height()));
  }
  if (subtree_level < 0) {
    subtree_level = z.level();
    for (;; ++subtree_level) {
      if (subtree_level > tree.height()) {
        return absl::InvalidArgumentError(
            "matrix nodes have no common ancestor");
      }
      absl::StatusOr<CellId> first =
          tree.Ancestor(z.node_ids()[0], subtree_level);
      if (!first.ok()) return first.status();
      bool shared = true;
      for (int i = 1; i < k && shared; ++i) {
        absl::StatusOr<CellId> other =
            tree.Ancestor(z.node_ids()[i], subtree_level);
        if (!other.ok()) return other.status();
        shared = *other == *first;
      }
      if (shared) break;
    }
  }
  if (target_level > subtree_level) {
    return absl::OutOfRangeError(absl::StrFormat(
        "target level %d exceeds the subtree height %d", target_level,
        subtree_level));
  }

  std::map<CellId, std::vector<int>> groups;
  std::vector<double> prior(k);
  for (int i = 0; i < k; ++i) {
    const TreeNode* node = tree.Find(z.node_ids()[i]);
    if (node->level != z.level()) {
      return absl::InvalidArgumentError(absl::StrCat(
          z.node_ids()[i].str(), " is not at the matrix level"));
    }
    prior[i] = node->prior;
    groups[*tree.Ancestor(z.node_ids()[i], target_level)].push_back(i);
  }

  std::vector<CellId> ids;
  std::vector<std::vector<double>> rows;
  for (const auto& [row_id, row_members] : groups) {
    double mass = 0.0;
    for (int m : row_members) mass += prior[m];
    if (!(mass > 0.0)) {
      return absl::FailedPreconditionError(
          absl::StrCat("ancestor ", row_id.str(), " has zero prior mass"));
    }
    std::vector<double> row;
    for (const auto& [col_id, col_members] : groups) {
      double sum = 0.0;
      for (int m : row_members) {
        double inner = 0.0;
        for (int n : col_members) inner += z.at(m, n);
        sum += prior[m] * inner;
      }
      row.push_back(sum / mass);
    }
    ids.push_back(row_id);
    rows.push_back(std::move(row));
  }
  return ObfuscationMatrix::Create(target_level, std::move(ids),
                                   std::move(rows));
}

}  // namespace treeobf
