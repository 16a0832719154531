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
#include "treeobf/protocol.h"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <random>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'T', 'O', 'B', 'F'};
constexpr size_t kHeaderSize = 4 + 4 + 8;
constexpr size_t kTrailerSize = 4;

void PutLe(std::string& out, uint64_t value, int bytes) {
  for (int b = 0; b < bytes; ++b) out.push_back(static_cast<char>(value >> (8 * b)));
}

uint64_t GetLe(std::string_view in, size_t offset, int bytes) {
  uint64_t value = 0;
  for (int b = 0; b < bytes; ++b) {
    value |= static_cast<uint64_t>(static_cast<unsigned char>(in[offset + b]))
             << (8 * b);
  }
  return value;
}

uint32_t Crc32(std::string_view data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for very large payloads.
  constexpr size_t kChunk = 1u << 30;
  for (size_t pos = 0; pos < data.size(); pos += kChunk) {
    const size_t n = std::min(kChunk, data.size() - pos);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data.data() + pos),
                static_cast<uInt>(n));
  }
  return static_cast<uint32_t>(crc);
}

}  // namespace

bool operator==(const PrivacyForest& a, const PrivacyForest& b) {
  if (a.privacy_level != b.privacy_level || a.delta != b.delta ||
      a.epsilon != b.epsilon || a.tree_hash != b.tree_hash ||
      a.entries != b.entries || a.manifests != b.manifests) {
    return false;
  }
  if ((a.tree == nullptr) != (b.tree == nullptr)) return false;
  return a.tree == nullptr || a.tree->Serialize() == b.tree->Serialize();
}

absl::StatusOr<PrivacyForest> GeneratePrivacyForest(
    const LocationTree& tree, int privacy_level,
    const SynthesisConfig& config) {
  if (privacy_level < 1 || privacy_level > tree.height()) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "privacy level %d outside [1, %d]", privacy_level, tree.height()));
  }
  if (!std::isfinite(config.epsilon)) {
    return absl::InvalidArgumentError("forests need a finite epsilon");
  }
  PrivacyForest forest;
  forest.privacy_level = privacy_level;
  forest.delta = config.delta;
  forest.epsilon = config.epsilon;
  forest.tree_hash = tree.Hash();
  forest.tree = std::make_shared<const LocationTree>(tree);

  absl::StatusOr<std::vector<CellId>> roots = tree.NodesAtLevel(privacy_level);
  if (!roots.ok()) return roots.status();
  for (const CellId& root : *roots) {
    absl::StatusOr<std::vector<CellId>> leaves = tree.LeavesUnder(root);
    if (!leaves.ok()) return leaves.status();
    if (leaves->size() == 1) {
      forest.entries.emplace(root, ObfuscationMatrix::Identity(0, *leaves));
      forest.manifests.emplace(
          root, json{{"leaves", 1}, {"config", config.ToJson()}});
      continue;
    }
    absl::StatusOr<std::vector<double>> priors = SubtreePriors(tree, *leaves);
    if (!priors.ok()) return priors.status();
    absl::StatusOr<SynthesisResult> result =
        GenerateRobustMatrix(*leaves, tree, *priors, config);
    if (!result.ok()) {
      return absl::Status(result.status().code(),
                          absl::StrCat("subtree ", root.str(), ": ",
                                       result.status().message()));
    }
    forest.manifests.emplace(root, result->Manifest(config));
    forest.entries.emplace(root, std::move(result->matrix));
  }
  return forest;
}

absl::StatusOr<std::string> SerializeForest(const PrivacyForest& forest) {
  if (forest.tree == nullptr) {
    return absl::FailedPreconditionError("forest has no tree");
  }
  if (!std::isfinite(forest.epsilon)) {
    return absl::InvalidArgumentError("forest epsilon must be finite");
  }
  json entries = json::array();
  for (const auto& [root, matrix] : forest.entries) {
    auto manifest = forest.manifests.find(root);
    entries.push_back(
        {{"root", root.str()},
         {"matrix", matrix.ToJson()},
         {"manifest",
          manifest == forest.manifests.end() ? json() : manifest->second}});
  }
  const json payload = {{"header",
                         {{"version", kForestFormatVersion},
                          {"tree_hash", forest.tree_hash},
                          {"privacy_level", forest.privacy_level},
                          {"epsilon", forest.epsilon},
                          {"delta", forest.delta}}},
                        {"tree", forest.tree->ToJson()},
                        {"entries", entries}};
  const std::string body = payload.dump();
  std::string out(kMagic, sizeof(kMagic));
  PutLe(out, kForestFormatVersion, 4);
  PutLe(out, body.size(), 8);
  out += body;
  PutLe(out, Crc32(body), 4);
  return out;
}

absl::StatusOr<PrivacyForest> DeserializeForest(std::string_view bytes) {
  if (bytes.size() < kHeaderSize + kTrailerSize ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    return absl::DataLossError("not a privacy forest container");
  }
  const uint32_t version = static_cast<uint32_t>(GetLe(bytes, 4, 4));
  if (version != kForestFormatVersion) {
    return absl::FailedPreconditionError(absl::StrFormat(
        "forest format version %d, expected %d", version, kForestFormatVersion));
  }
  const uint64_t length = GetLe(bytes, 8, 8);
  if (length != bytes.size() - kHeaderSize - kTrailerSize) {
    return absl::DataLossError(absl::StrFormat(
        "checksum failure: payload length %d does not match %d available bytes",
        length, bytes.size() - kHeaderSize - kTrailerSize));
  }
  const std::string_view body = bytes.substr(kHeaderSize, length);
  const uint32_t stored = static_cast<uint32_t>(GetLe(bytes, kHeaderSize + length, 4));
  if (Crc32(body) != stored) {
    return absl::DataLossError("checksum failure: CRC-32 mismatch");
  }

  const json payload = json::parse(body, nullptr, /*allow_exceptions=*/false);
  if (payload.is_discarded()) {
    return absl::DataLossError("forest payload is not valid JSON");
  }
  try {
    PrivacyForest forest;
    const json& header = payload.at("header");
    forest.tree_hash = header.at("tree_hash").get<std::string>();
    forest.privacy_level = header.at("privacy_level").get<int>();
    forest.epsilon = header.at("epsilon").get<double>();
    forest.delta = header.at("delta").get<int>();
    absl::StatusOr<LocationTree> tree = LocationTree::FromJson(payload.at("tree"));
    if (!tree.ok()) return tree.status();
    if (tree->Hash() != forest.tree_hash) {
      return absl::DataLossError("embedded tree does not match the header hash");
    }
    forest.tree = std::make_shared<const LocationTree>(*std::move(tree));
    for (const json& entry : payload.at("entries")) {
      const CellId root(entry.at("root").get<std::string>());
      absl::StatusOr<ObfuscationMatrix> matrix =
          ObfuscationMatrix::FromJson(entry.at("matrix"));
      if (!matrix.ok()) return matrix.status();
      forest.entries.emplace(root, *std::move(matrix));
      if (!entry.at("manifest").is_null()) {
        forest.manifests.emplace(root, entry.at("manifest"));
      }
    }
    return forest;
  } catch (const json::exception& e) {
    return absl::DataLossError(absl::StrCat("malformed forest: ", e.what()));
  }
}

json ObfuscationRequest::ToJson() const {
  return {{"privacy_level", privacy_level}, {"prune_count", prune_count}};
}

absl::StatusOr<ObfuscationRequest> ObfuscationRequest::FromJson(const json& j) {
  if (!j.is_object()) return absl::InvalidArgumentError("request must be an object");
  for (const auto& [key, value] : j.items()) {
    if (key != "privacy_level" && key != "prune_count") {
      return absl::InvalidArgumentError(
          absl::StrCat("request carries unexpected field '", key, "'"));
    }
    if (!value.is_number_integer()) {
      return absl::InvalidArgumentError(
          absl::StrCat("request field '", key, "' must be an integer"));
    }
  }
  if (!j.contains("privacy_level") || !j.contains("prune_count")) {
    return absl::InvalidArgumentError("request is missing a field");
  }
  ObfuscationRequest request;
  request.privacy_level = j.at("privacy_level").get<int>();
  request.prune_count = j.at("prune_count").get<int>();
  if (request.prune_count < 0) {
    return absl::InvalidArgumentError("prune_count must be >= 0");
  }
  return request;
}

json ObfuscationResult::ToJson() const {
  return {{"obfuscated", obfuscated.str()},
          {"subtree_root", subtree_root.str()},
          {"privacy_violation_count", privacy_violation_count},
          {"policy_violation_count", policy_violation_count},
          {"rng_seed", rng_seed},
          {"request", request.ToJson()}};
}

absl::StatusOr<CustomizedMatrix> CustomizeMatrix(const LocationTree& tree,
                                                 const CellId& real,
                                                 const Policy& policy,
                                                 const PrivacyForest& forest,
                                                 OverflowMode mode) {
  if (policy.privacy_level != forest.privacy_level) {
    return absl::InvalidArgumentError(absl::StrFormat(
        "policy privacy level %d does not match the forest's %d",
        policy.privacy_level, forest.privacy_level));
  }
  if (tree.Hash() != forest.tree_hash) {
    return absl::FailedPreconditionError("forest was built on a different tree");
  }
  absl::StatusOr<std::vector<std::string>> notes = ValidatePolicy(policy, tree);
  if (!notes.ok()) return notes.status();

  CustomizedMatrix out;
  absl::StatusOr<CellId> root = tree.FindSubtree(real, policy.privacy_level);
  if (!root.ok()) return root.status();
  out.subtree_root = *root;
  auto entry = forest.entries.find(*root);
  if (entry == forest.entries.end()) {
    return absl::NotFoundError(
        absl::StrCat("forest has no entry for subtree ", root->str()));
  }
  const ObfuscationMatrix& leaf_matrix = entry->second;

  absl::StatusOr<std::vector<PolicyFailure>> failures = EvalPolicyDetailed(
      leaf_matrix.node_ids(), tree, real, policy.preferences);
  if (!failures.ok()) return failures.status();
  OverflowResolution resolution =
      ResolveOverflow(*failures, forest.delta, mode);
  out.prune = std::move(resolution.prune);
  out.policy_violation_count = resolution.policy_violations;
  out.request = {policy.privacy_level, static_cast<int>(out.prune.size())};

  absl::StatusOr<ObfuscationMatrix> pruned = PruneMatrix(leaf_matrix, out.prune);
  if (!pruned.ok()) return pruned.status();
  absl::StatusOr<GeoIndReport> audit = AuditGeoInd(*pruned, tree, forest.epsilon);
  if (!audit.ok()) return audit.status();
  out.privacy_violation_count = audit->count();

  if (policy.precision_level > 0) {
    absl::StatusOr<ObfuscationMatrix> reduced =
        ReducePrecision(*pruned, tree, policy.precision_level,
                        forest.privacy_level);
    if (!reduced.ok()) return reduced.status();
    out.matrix = *std::move(reduced);
  } else {
    out.matrix = *std::move(pruned);
  }
  absl::StatusOr<CellId> reported = tree.Ancestor(real, policy.precision_level);
  if (!reported.ok()) return reported.status();
  out.row = out.matrix.IndexOf(*reported);
  if (out.row < 0) {
    return absl::InternalError("real location missing from the customized matrix");
  }
  return out;
}

int SampleIndex(std::span<const double> row, uint64_t seed) {
  std::mt19937_64 rng(seed);
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  double cumulative = 0.0;
  int last_positive = -1;
  for (size_t j = 0; j < row.size(); ++j) {
    if (row[j] <= 0.0) continue;
    cumulative += row[j];
    last_positive = static_cast<int>(j);
    if (u < cumulative) return last_positive;
  }
  return last_positive;  // u landed in the round-off gap below 1
}

absl::StatusOr<ObfuscationResult> GenerateObfuscatedLocation(
    const LocationTree& tree, const CellId& real, const Policy& policy,
    const PrivacyForest& forest, uint64_t rng_seed, OverflowMode mode) {
  absl::StatusOr<CustomizedMatrix> custom =
      CustomizeMatrix(tree, real, policy, forest, mode);
  if (!custom.ok()) return custom.status();
  ObfuscationResult result;
  const int column = SampleIndex(custom->matrix.row(custom->row), rng_seed);
  result.obfuscated = custom->matrix.node_ids()[column];
  result.subtree_root = custom->subtree_root;
  result.privacy_violation_count = custom->privacy_violation_count;
  result.policy_violation_count = custom->policy_violation_count;
  result.rng_seed = rng_seed;
  result.request = custom->request;
  return result;
}

absl::StatusOr<std::shared_ptr<const PrivacyForest>> ForestCache::GetOrCreate(
    const LocationTree& tree, int privacy_level, const SynthesisConfig& config) {
  Key key{tree.Hash(), privacy_level, config.epsilon, config.delta};
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = forests_.find(key);
    if (it != forests_.end()) return it->second;
  }
  absl::StatusOr<PrivacyForest> forest =
      GeneratePrivacyForest(tree, privacy_level, config);
  if (!forest.ok()) return forest.status();
  auto shared = std::make_shared<const PrivacyForest>(*std::move(forest));
  std::lock_guard<std::mutex> lock(mu_);
  return forests_.emplace(std::move(key), std::move(shared)).first->second;
}

size_t ForestCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return forests_.size();
}

}  // namespace treeobf
