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
#include "treeobf/spatial_index.h"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

constexpr double kPriorSumTolerance = 1e-9;
constexpr double kAggregateTolerance = 1e-12;

// Children block for one level: rows x cols with rows the largest divisor
// of b that does not exceed sqrt(b).
std::pair<int, int> BlockShape(int branching, int parent_depth) {
  int rows = 1;
  for (int r = 1; static_cast<int64_t>(r) * r <= branching; ++r) {
    if (branching % r == 0) rows = r;
  }
  const int cols = branching / rows;
  return parent_depth % 2 == 0 ? std::make_pair(rows, cols)
                               : std::make_pair(cols, rows);
}

int Digits(int value) {
  int digits = 1;
  while (value >= 10) {
    value /= 10;
    ++digits;
  }
  return digits;
}

json AttributeToJson(const AttributeValue& value) {
  return std::visit([](auto v) { return json(v); }, value);
}

absl::StatusOr<AttributeValue> AttributeFromJson(const json& value) {
  if (value.is_boolean()) return AttributeValue(value.get<bool>());
  if (value.is_number()) return AttributeValue(value.get<double>());
  return absl::InvalidArgumentError(
      absl::StrCat("attribute values must be boolean or numeric, got ",
                   value.dump()));
}

}  // namespace

absl::StatusOr<DistanceMetric> ParseDistanceMetric(std::string_view name) {
  if (name == "euclidean") return DistanceMetric::kEuclidean;
  if (name == "hop") return DistanceMetric::kHop;
  return absl::InvalidArgumentError(
      absl::StrCat("unknown distance metric '", std::string(name), "'"));
}

const char* DistanceMetricName(DistanceMetric metric) {
  return metric == DistanceMetric::kHop ? "hop" : "euclidean";
}

bool TreeNode::Contains(const Point& p) const {
  const double x0 = centroid.x - extent.x / 2;
  const double y0 = centroid.y - extent.y / 2;
  return p.x >= x0 && p.x < x0 + extent.x && p.y >= y0 && p.y < y0 + extent.y;
}

absl::StatusOr<LocationTree> LocationTree::BuildSynthetic(
    const TreeConfig& config) {
  if (config.branching < 2) {
    return absl::InvalidArgumentError("branching must be at least 2");
  }
  if (config.height < 1) {
    return absl::InvalidArgumentError("height must be at least 1");
  }
  if (!(config.cell_size > 0.0) || !std::isfinite(config.cell_size)) {
    return absl::InvalidArgumentError("cell_size must be positive and finite");
  }
  int64_t leaves = 1;
  for (int h = 0; h < config.height; ++h) {
    leaves *= config.branching;
    if (leaves > config.max_leaves) {
      return absl::ResourceExhaustedError(absl::StrFormat(
          "branching %d and height %d exceed the leaf capacity %d",
          config.branching, config.height, config.max_leaves));
    }
  }

  LocationTree tree;
  tree.config_ = config;
  const int width = Digits(config.branching - 1);

  // extent[level] of a node at that level.
  std::vector<Point> extent(config.height + 1);
  extent[0] = {config.cell_size, config.cell_size};
  for (int level = 1; level <= config.height; ++level) {
    const auto [rows, cols] =
        BlockShape(config.branching, config.height - level);
    extent[level] = {extent[level - 1].x * cols, extent[level - 1].y * rows};
  }

  const double leaf_prior = 1.0 / static_cast<double>(leaves);
  std::function<void(const CellId&, const CellId&, int, Point)> build =
      [&](const CellId& id, const CellId& parent, int level, Point corner) {
        TreeNode node;
        node.id = id;
        node.level = level;
        node.extent = extent[level];
        node.centroid = {corner.x + extent[level].x / 2,
                         corner.y + extent[level].y / 2};
        node.parent = parent;
        if (level == 0) {
          node.prior = leaf_prior;
        } else {
          const auto [rows, cols] =
              BlockShape(config.branching, config.height - level);
          for (int k = 0; k < config.branching; ++k) {
            const int row = k / cols;
            const int col = k % cols;
            CellId child(absl::StrFormat("%s-%0*d", id.str(), width, k));
            node.children.push_back(child);
            build(child, id, level - 1,
                  {corner.x + col * extent[level - 1].x,
                   corner.y + row * extent[level - 1].y});
          }
        }
        tree.nodes_.emplace(id, std::move(node));
      };
  tree.root_ = CellId("n");
  build(tree.root_, CellId(), config.height, config.origin);
  tree.RebuildLevels();
  tree.AggregatePriors();
  return tree;
}

void LocationTree::RebuildLevels() {
  int height = 0;
  for (const auto& [id, node] : nodes_) height = std::max(height, node.level);
  levels_.assign(height + 1, {});
  // nodes_ is ordered, so each level list comes out lexicographic.
  for (const auto& [id, node] : nodes_) levels_[node.level].push_back(id);
}

void LocationTree::AggregatePriors() {
  for (int level = 1; level < static_cast<int>(levels_.size()); ++level) {
    for (const CellId& id : levels_[level]) {
      TreeNode& node = nodes_.at(id);
      double sum = 0.0;
      for (const CellId& child : node.children) sum += nodes_.at(child).prior;
      node.prior = sum;
    }
  }
}

const TreeNode* LocationTree::Find(const CellId& id) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() ? nullptr : &it->second;
}

absl::StatusOr<const TreeNode*> LocationTree::Get(const CellId& id) const {
  const TreeNode* node = Find(id);
  if (node == nullptr) {
    return absl::NotFoundError(absl::StrCat("cell '", id.str(), "' not in tree"));
  }
  return node;
}

absl::StatusOr<std::vector<CellId>> LocationTree::NodesAtLevel(int level) const {
  if (level < 0 || level > height()) {
    return absl::OutOfRangeError(
        absl::StrFormat("level %d outside [0, %d]", level, height()));
  }
  return levels_[level];
}

absl::StatusOr<CellId> LocationTree::Ancestor(const CellId& node_id,
                                              int level) const {
  absl::StatusOr<const TreeNode*> node = Get(node_id);
  if (!node.ok()) return node.status();
  if (level < (*node)->level || level > height()) {
    return absl::OutOfRangeError(absl::StrFormat(
        "level %d outside [%d, %d] for %s", level, (*node)->level, height(),
        node_id.str()));
  }
  const TreeNode* current = *node;
  while (current->level < level) current = &nodes_.at(current->parent);
  return current->id;
}

absl::StatusOr<CellId> LocationTree::FindSubtree(const CellId& leaf,
                                                 int level) const {
  const TreeNode* node = Find(leaf);
  if (node == nullptr) {
    return absl::NotFoundError(absl::StrCat("leaf '", leaf.str(), "' not in tree"));
  }
  if (!node->is_leaf()) {
    return absl::InvalidArgumentError(
        absl::StrCat("'", leaf.str(), "' is not a leaf"));
  }
  return Ancestor(leaf, level);
}

absl::StatusOr<std::vector<CellId>> LocationTree::LeavesUnder(
    const CellId& node_id) const {
  if (!Contains(node_id)) {
    return absl::NotFoundError(absl::StrCat("cell '", node_id.str(), "' not in tree"));
  }
  std::vector<CellId> leaves;
  std::vector<CellId> stack = {node_id};
  while (!stack.empty()) {
    const TreeNode& node = nodes_.at(stack.back());
    stack.pop_back();
    if (node.is_leaf()) {
      leaves.push_back(node.id);
    } else {
      stack.insert(stack.end(), node.children.rbegin(), node.children.rend());
    }
  }
  std::sort(leaves.begin(), leaves.end());
  return leaves;
}

absl::StatusOr<double> LocationTree::Distance(const CellId& a,
                                              const CellId& b) const {
  absl::StatusOr<const TreeNode*> na = Get(a);
  if (!na.ok()) return na.status();
  absl::StatusOr<const TreeNode*> nb = Get(b);
  if (!nb.ok()) return nb.status();
  if ((*na)->level != (*nb)->level) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "level mismatch: %s is at level %d, %s at level %d", a.str(),
        (*na)->level, b.str(), (*nb)->level));
  }
  const double dx = std::abs((*na)->centroid.x - (*nb)->centroid.x);
  const double dy = std::abs((*na)->centroid.y - (*nb)->centroid.y);
  if (config_.metric == DistanceMetric::kEuclidean) return std::hypot(dx, dy);
  const Point& cell = (*na)->extent;
  return (std::round(dx / cell.x) + std::round(dy / cell.y)) * config_.cell_size;
}

absl::StatusOr<double> LocationTree::CentroidDistance(const CellId& a,
                                                      const CellId& b) const {
  absl::StatusOr<const TreeNode*> na = Get(a);
  if (!na.ok()) return na.status();
  absl::StatusOr<const TreeNode*> nb = Get(b);
  if (!nb.ok()) return nb.status();
  return std::hypot((*na)->centroid.x - (*nb)->centroid.x,
                    (*na)->centroid.y - (*nb)->centroid.y);
}

absl::StatusOr<CellId> LocationTree::LocateLeaf(const Point& p) const {
  const TreeNode* node = &nodes_.at(root_);
  if (!node->Contains(p)) {
    return absl::NotFoundError(
        absl::StrFormat("point (%g, %g) is outside the region", p.x, p.y));
  }
  while (!node->is_leaf()) {
    const TreeNode* next = nullptr;
    for (const CellId& child : node->children) {
      const TreeNode& c = nodes_.at(child);
      if (c.Contains(p)) {
        next = &c;
        break;
      }
    }
    if (next == nullptr) {
      return absl::NotFoundError(absl::StrFormat(
          "point (%g, %g) falls in a removed cell under %s", p.x, p.y,
          node->id.str()));
    }
    node = next;
  }
  return node->id;
}

absl::Status LocationTree::SetAttribute(const CellId& id,
                                        const std::string& name,
                                        AttributeValue value) {
  auto it = nodes_.find(id);
  if (it == nodes_.end()) {
    return absl::NotFoundError(absl::StrCat("cell '", id.str(), "' not in tree"));
  }
  if (name == "distance") {
    return absl::InvalidArgumentError("'distance' is a reserved attribute");
  }
  it->second.attributes[name] = value;
  return absl::OkStatus();
}

absl::Status LocationTree::ApplyAttributeTable(const json& table) {
  if (!table.is_object()) {
    return absl::InvalidArgumentError("attribute table must be an object");
  }
  for (const auto& [cell, attrs] : table.items()) {
    if (!attrs.is_object()) {
      return absl::InvalidArgumentError(
          absl::StrCat("attributes of '", cell, "' must be an object"));
    }
    for (const auto& [name, value] : attrs.items()) {
      absl::StatusOr<AttributeValue> parsed = AttributeFromJson(value);
      if (!parsed.ok()) return parsed.status();
      if (auto s = SetAttribute(CellId(cell), name, *parsed); !s.ok()) return s;
    }
  }
  return absl::OkStatus();
}

absl::Status LocationTree::SetLeafPriors(std::span<const double> priors) {
  if (priors.size() != leaves().size()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "%d priors for %d leaves", priors.size(), leaves().size()));
  }
  for (size_t i = 0; i < priors.size(); ++i) {
    nodes_.at(levels_[0][i]).prior = priors[i];
  }
  AggregatePriors();
  return Validate();
}

absl::Status LocationTree::Validate() const {
  if (!Contains(root_)) return absl::FailedPreconditionError("root missing");
  if (!nodes_.at(root_).parent.empty()) {
    return absl::FailedPreconditionError("root has a parent");
  }
  const int h = height();
  if (nodes_.at(root_).level != h) {
    return absl::FailedPreconditionError("root is not at the top level");
  }
  double leaf_sum = 0.0;
  for (const auto& [id, node] : nodes_) {
    if ((node.level == 0) != node.children.empty()) {
      return absl::FailedPreconditionError(
          absl::StrCat(id.str(), ": level 0 must coincide with having no children"));
    }
    if (id != root_) {
      const TreeNode* parent = Find(node.parent);
      if (parent == nullptr || parent->level != node.level + 1) {
        return absl::FailedPreconditionError(
            absl::StrCat(id.str(), ": parent missing or not one level up"));
      }
    }
    if (!(node.prior >= 0.0) || node.prior > 1.0 + kPriorSumTolerance) {
      return absl::FailedPreconditionError(
          absl::StrCat(id.str(), ": prior outside [0, 1]"));
    }
    if (node.is_leaf()) {
      leaf_sum += node.prior;
      continue;
    }
    double child_sum = 0.0;
    for (const CellId& child_id : node.children) {
      const TreeNode* child = Find(child_id);
      if (child == nullptr || child->parent != id) {
        return absl::FailedPreconditionError(
            absl::StrCat(id.str(), ": inconsistent child ", child_id.str()));
      }
      child_sum += child->prior;
      // Children must sit inside the parent cell and not overlap.
      const double eps = 1e-9 * std::max(node.extent.x, node.extent.y);
      if (std::abs(child->centroid.x - node.centroid.x) + child->extent.x / 2 >
              node.extent.x / 2 + eps ||
          std::abs(child->centroid.y - node.centroid.y) + child->extent.y / 2 >
              node.extent.y / 2 + eps) {
        return absl::FailedPreconditionError(
            absl::StrCat(child_id.str(), " extends outside ", id.str()));
      }
      for (const CellId& other_id : node.children) {
        if (other_id <= child_id) continue;
        const TreeNode& other = nodes_.at(other_id);
        const double ox = (child->extent.x + other.extent.x) / 2 -
                          std::abs(child->centroid.x - other.centroid.x);
        const double oy = (child->extent.y + other.extent.y) / 2 -
                          std::abs(child->centroid.y - other.centroid.y);
        if (ox > eps && oy > eps) {
          return absl::FailedPreconditionError(absl::StrCat(
              child_id.str(), " overlaps ", other_id.str()));
        }
      }
    }
    if (std::abs(child_sum - node.prior) > kAggregateTolerance) {
      return absl::FailedPreconditionError(
          absl::StrCat(id.str(), ": prior differs from the sum of its children"));
    }
  }
  if (std::abs(leaf_sum - 1.0) > kPriorSumTolerance) {
    return absl::FailedPreconditionError(
        absl::StrFormat("leaf priors sum to %.17g", leaf_sum));
  }
  return absl::OkStatus();
}

json LocationTree::ToJson() const {
  json nodes = json::array();
  for (const auto& [id, node] : nodes_) {
    json attributes = json::object();
    for (const auto& [name, value] : node.attributes) {
      attributes[name] = AttributeToJson(value);
    }
    nodes.push_back({{"id", id.str()},
                     {"level", node.level},
                     {"centroid", {node.centroid.x, node.centroid.y}},
                     {"extent", {node.extent.x, node.extent.y}},
                     {"parent", node.parent.str()},
                     {"prior", node.prior},
                     {"attributes", attributes}});
  }
  return {{"format", "treeobf-tree"},
          {"version", 1},
          {"config",
           {{"branching", config_.branching},
            {"height", config_.height},
            {"cell_size", config_.cell_size},
            {"origin", {config_.origin.x, config_.origin.y}},
            {"metric", DistanceMetricName(config_.metric)},
            {"max_leaves", config_.max_leaves}}},
          {"root", root_.str()},
          {"nodes", nodes}};
}

std::string LocationTree::Serialize() const { return ToJson().dump(); }

std::string LocationTree::Hash() const {
  const std::string text = Serialize();
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  EVP_Digest(text.data(), text.size(), digest, &length, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned int i = 0; i < length; ++i) {
    absl::StrAppendFormat(&hex, "%02x", digest[i]);
  }
  return hex;
}

absl::StatusOr<LocationTree> LocationTree::FromJson(const json& j) {
  try {
    LocationTree tree;
    const json& config = j.at("config");
    tree.config_.branching = config.value("branching", 0);
    tree.config_.height = config.value("height", 0);
    tree.config_.cell_size = config.at("cell_size").get<double>();
    tree.config_.origin = {config.at("origin").at(0).get<double>(),
                           config.at("origin").at(1).get<double>()};
    absl::StatusOr<DistanceMetric> metric =
        ParseDistanceMetric(config.value("metric", "euclidean"));
    if (!metric.ok()) return metric.status();
    tree.config_.metric = *metric;
    tree.config_.max_leaves = config.value("max_leaves", int64_t{65536});
    tree.root_ = CellId(j.at("root").get<std::string>());

    for (const json& n : j.at("nodes")) {
      TreeNode node;
      node.id = CellId(n.at("id").get<std::string>());
      node.level = n.at("level").get<int>();
      node.centroid = {n.at("centroid").at(0).get<double>(),
                       n.at("centroid").at(1).get<double>()};
      node.extent = {n.at("extent").at(0).get<double>(),
                     n.at("extent").at(1).get<double>()};
      node.parent = CellId(n.value("parent", ""));
      node.prior = n.value("prior", 0.0);
      if (n.contains("attributes")) {
        for (const auto& [name, value] : n.at("attributes").items()) {
          absl::StatusOr<AttributeValue> parsed = AttributeFromJson(value);
          if (!parsed.ok()) return parsed.status();
          node.attributes[name] = *parsed;
        }
      }
      if (node.level < 0) {
        return absl::InvalidArgumentError(
            absl::StrCat(node.id.str(), ": negative level"));
      }
      const CellId id = node.id;
      if (!tree.nodes_.emplace(id, std::move(node)).second) {
        return absl::InvalidArgumentError(
            absl::StrCat("duplicate cell id ", id.str()));
      }
    }
    for (auto& [id, node] : tree.nodes_) {
      if (node.parent.empty()) continue;
      auto parent = tree.nodes_.find(node.parent);
      if (parent == tree.nodes_.end()) {
        return absl::InvalidArgumentError(
            absl::StrCat(id.str(), ": unknown parent ", node.parent.str()));
      }
      parent->second.children.push_back(id);
    }
    // Children lists follow lexicographic order because nodes_ is ordered.
    tree.RebuildLevels();
    if (!tree.Contains(tree.root_)) {
      return absl::InvalidArgumentError("root id not among nodes");
    }
    tree.config_.height = tree.height();
    tree.AggregatePriors();
    if (auto s = tree.Validate(); !s.ok()) return s;
    return tree;
  } catch (const json::exception& e) {
    return absl::InvalidArgumentError(absl::StrCat("malformed tree: ", e.what()));
  }
}

absl::StatusOr<LocationTree> LocationTree::Parse(std::string_view text) {
  json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return absl::InvalidArgumentError("tree is not valid JSON");
  return FromJson(j);
}

absl::StatusOr<LocationTree> IngestCheckIns(
    const LocationTree& tree, std::span<const CheckInRecord> records,
    const GeoAffine& mapping, IngestStats* stats) {
  IngestStats local;
  std::map<CellId, int64_t> counts;
  for (const CheckInRecord& record : records) {
    ++local.total;
    if (!std::isfinite(record.lat) || !std::isfinite(record.lon)) {
      ++local.out_of_region;
      continue;
    }
    absl::StatusOr<CellId> leaf =
        tree.LocateLeaf({mapping.ToX(record.lon), mapping.ToY(record.lat)});
    if (!leaf.ok()) {
      ++local.out_of_region;
      continue;
    }
    ++counts[*leaf];
    ++local.in_region;
  }
  if (local.in_region == 0) {
    if (stats != nullptr) *stats = local;
    return absl::FailedPreconditionError(
        "empty prior: no check-ins fall inside the region");
  }

  LocationTree out = tree;
  const double total = static_cast<double>(local.in_region);
  for (const CellId& leaf : tree.leaves()) {
    auto it = counts.find(leaf);
    if (it == counts.end()) {
      out.nodes_.erase(leaf);
      ++local.leaves_removed;
    } else {
      out.nodes_.at(leaf).prior = static_cast<double>(it->second) / total;
    }
  }
  // Drop dangling child references level by level, then childless parents.
  for (int level = 1; level <= tree.height(); ++level) {
    for (const CellId& id : tree.levels_[level]) {
      auto it = out.nodes_.find(id);
      if (it == out.nodes_.end()) continue;
      std::erase_if(it->second.children,
                    [&](const CellId& c) { return !out.nodes_.count(c); });
      if (it->second.children.empty() && id != out.root_) out.nodes_.erase(it);
    }
  }
  out.RebuildLevels();
  out.AggregatePriors();
  if (stats != nullptr) *stats = local;
  if (auto s = out.Validate(); !s.ok()) return s;
  return out;
}

absl::StatusOr<std::vector<double>> SubtreePriors(
    const LocationTree& tree, std::span<const CellId> leaves) {
  std::vector<double> priors;
  double total = 0.0;
  for (const CellId& leaf : leaves) {
    absl::StatusOr<const TreeNode*> node = tree.Get(leaf);
    if (!node.ok()) return node.status();
    priors.push_back((*node)->prior);
    total += (*node)->prior;
  }
  if (!(total > 0.0)) {
    return absl::FailedPreconditionError("subtree has zero prior mass");
  }
  for (double& p : priors) p /= total;
  return priors;
}

}  // namespace treeobf
