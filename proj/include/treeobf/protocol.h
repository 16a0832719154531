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
#ifndef TREEOBF_PROTOCOL_H_
#define TREEOBF_PROTOCOL_H_

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <tuple>

#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/customization.h"
#include "treeobf/geoind.h"
#include "treeobf/spatial_index.h"
#include "treeobf/synthesis.h"

namespace treeobf {

inline constexpr uint32_t kForestFormatVersion = 1;

// One robust leaf-level matrix per node at the privacy level. The tree the
// forest was built on travels with it so that a client can run the whole
// customization pipeline from the forest alone.
struct PrivacyForest {
  int privacy_level = 0;
  int delta = 0;
  double epsilon = 0.0;
  std::string tree_hash;
  std::shared_ptr<const LocationTree> tree;
  std::map<CellId, ObfuscationMatrix> entries;
  std::map<CellId, nlohmann::json> manifests;

  friend bool operator==(const PrivacyForest& a, const PrivacyForest& b);
};

// Runs GenerateRobustMatrix for the leaves under every node at
// `privacy_level`, using that subtree's renormalized priors. Single-leaf
// subtrees get the 1 x 1 identity.
absl::StatusOr<PrivacyForest> GeneratePrivacyForest(
    const LocationTree& tree, int privacy_level, const SynthesisConfig& config);

// Container: "TOBF", u32 version, u64 payload length, JSON payload, u32
// CRC-32 of the payload. Integers are little-endian.
absl::StatusOr<std::string> SerializeForest(const PrivacyForest& forest);
absl::StatusOr<PrivacyForest> DeserializeForest(std::string_view bytes);

// What the client reveals to the server: nothing but the privacy level and
// the number of locations it is going to prune.
struct ObfuscationRequest {
  int privacy_level = 0;
  int prune_count = 0;

  nlohmann::json ToJson() const;
  // Rejects any field other than the two above.
  static absl::StatusOr<ObfuscationRequest> FromJson(const nlohmann::json& j);
};

struct ObfuscationResult {
  CellId obfuscated;
  CellId subtree_root;
  int privacy_violation_count = 0;
  int policy_violation_count = 0;
  uint64_t rng_seed = 0;
  ObfuscationRequest request;

  nlohmann::json ToJson() const;
  friend bool operator==(const ObfuscationResult& a,
                         const ObfuscationResult& b) {
    return a.ToJson() == b.ToJson();
  }
};

// The client-side matrix after pruning and precision reduction, with the
// row to sample from.
struct CustomizedMatrix {
  CellId subtree_root;
  ObfuscationMatrix matrix;
  int row = 0;
  PruneSet prune;
  int privacy_violation_count = 0;
  int policy_violation_count = 0;
  ObfuscationRequest request;
};

absl::StatusOr<CustomizedMatrix> CustomizeMatrix(
    const LocationTree& tree, const CellId& real, const Policy& policy,
    const PrivacyForest& forest,
    OverflowMode mode = OverflowMode::kEnforcePolicy);

absl::StatusOr<ObfuscationResult> GenerateObfuscatedLocation(
    const LocationTree& tree, const CellId& real, const Policy& policy,
    const PrivacyForest& forest, uint64_t rng_seed,
    OverflowMode mode = OverflowMode::kEnforcePolicy);

// Inverse-CDF draw from a probability row with a seeded mt19937_64.
int SampleIndex(std::span<const double> row, uint64_t seed);

// Forests keyed by (tree hash, privacy level, epsilon, delta). The other
// synthesis settings are assumed fixed for the lifetime of a cache.
class ForestCache {
 public:
  absl::StatusOr<std::shared_ptr<const PrivacyForest>> GetOrCreate(
      const LocationTree& tree, int privacy_level,
      const SynthesisConfig& config);
  size_t size() const;

 private:
  using Key = std::tuple<std::string, int, double, int>;
  mutable std::mutex mu_;
  std::map<Key, std::shared_ptr<const PrivacyForest>> forests_;
};

}  // namespace treeobf

#endif  // TREEOBF_PROTOCOL_H_
