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
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "absl/status/status.h"
#include "absl/status/statusor.h"
#include "json.hpp"
#include "treeobf/bench.h"
#include "treeobf/checkins.h"
#include "treeobf/customization.h"
#include "treeobf/geoind.h"
#include "treeobf/protocol.h"
#include "treeobf/spatial_index.h"
#include "treeobf/synthesis.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

absl::StatusOr<std::string> ReadFile(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return absl::NotFoundError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

absl::Status WriteFile(const std::string& path, const std::string& bytes) {
  if (path == "-") {
    std::cout << bytes;
    return absl::OkStatus();
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) return absl::PermissionDeniedError("cannot write " + path);
  out << bytes;
  return out ? absl::OkStatus() : absl::DataLossError("short write " + path);
}

absl::StatusOr<LocationTree> LoadTree(const std::string& path) {
  if (path.empty()) return LocationTree::BuildSynthetic(DeskTreeConfig());
  absl::StatusOr<std::string> text = ReadFile(path);
  if (!text.ok()) return text.status();
  return LocationTree::Parse(*text);
}

int Report(const absl::Status& status) {
  if (status.ok()) return 0;
  std::cerr << "treeobf: " << status << "\n";
  return 1;
}

struct TreeOptions {
  int branching = 4;
  int height = 2;
  double cell_size = 1.0;
  std::string metric = "euclidean";
  std::string attributes;
  std::string out = "-";
};

absl::Status BuildTree(const TreeOptions& options) {
  absl::StatusOr<DistanceMetric> metric = ParseDistanceMetric(options.metric);
  if (!metric.ok()) return metric.status();
  TreeConfig config;
  config.branching = options.branching;
  config.height = options.height;
  config.cell_size = options.cell_size;
  config.metric = *metric;
  absl::StatusOr<LocationTree> tree = LocationTree::BuildSynthetic(config);
  if (!tree.ok()) return tree.status();
  if (!options.attributes.empty()) {
    absl::StatusOr<std::string> text = ReadFile(options.attributes);
    if (!text.ok()) return text.status();
    json table = json::parse(*text, nullptr, false);
    if (table.is_discarded()) {
      return absl::InvalidArgumentError("attribute table is not JSON");
    }
    if (absl::Status s = tree->ApplyAttributeTable(table); !s.ok()) return s;
  }
  return WriteFile(options.out, tree->Serialize());
}

struct IngestOptions {
  std::string tree;
  std::string checkins;
  int64_t synth = 0;
  uint64_t seed = 1;
  double skew = 1.0;
  GeoAffine mapping;
  std::string out = "-";
  std::string checkins_out;
};

absl::Status Ingest(const IngestOptions& options) {
  absl::StatusOr<LocationTree> tree = LoadTree(options.tree);
  if (!tree.ok()) return tree.status();
  std::vector<CheckInRecord> records;
  if (!options.checkins.empty()) {
    std::ifstream in(options.checkins);
    if (!in) return absl::NotFoundError("cannot open " + options.checkins);
    absl::StatusOr<std::vector<CheckInRecord>> read = ReadCheckIns(in);
    if (!read.ok()) return read.status();
    records = *std::move(read);
  } else if (options.synth > 0) {
    records = SynthCheckIns(*tree, options.synth, options.seed, options.skew,
                            options.mapping);
  } else {
    return absl::InvalidArgumentError("need --checkins or --synth");
  }
  if (!options.checkins_out.empty()) {
    std::ofstream out(options.checkins_out);
    WriteCheckIns(out, records);
  }
  IngestStats stats;
  absl::StatusOr<LocationTree> ingested =
      IngestCheckIns(*tree, records, options.mapping, &stats);
  if (!ingested.ok()) return ingested.status();
  std::cerr << "records " << stats.total << ", in region " << stats.in_region
            << ", out of region " << stats.out_of_region << ", leaves removed "
            << stats.leaves_removed << "\n";
  return WriteFile(options.out, ingested->Serialize());
}

struct SynthesizeOptions {
  std::string tree;
  int privacy_level = 1;
  double epsilon = 50.0;
  int delta = 0;
  int num_targets = 20;
  uint64_t seed = 1;
  double threshold = 5e-3;
  int max_iterations = 20;
  std::string rpb_mode = "auto";
  std::string out;
};

absl::Status Synthesize(const SynthesizeOptions& options) {
  absl::StatusOr<LocationTree> tree = LoadTree(options.tree);
  if (!tree.ok()) return tree.status();
  absl::StatusOr<RpbMode> mode = ParseRpbMode(options.rpb_mode);
  if (!mode.ok()) return mode.status();
  SynthesisConfig config;
  config.epsilon = options.epsilon;
  config.delta = options.delta;
  config.targets = RandomTargets(*tree, options.num_targets, options.seed);
  config.convergence_threshold = options.threshold;
  config.max_iterations = options.max_iterations;
  config.rpb_mode = *mode;
  absl::StatusOr<PrivacyForest> forest =
      GeneratePrivacyForest(*tree, options.privacy_level, config);
  if (!forest.ok()) return forest.status();
  absl::StatusOr<std::string> bytes = SerializeForest(*forest);
  if (!bytes.ok()) return bytes.status();
  for (const auto& [root, manifest] : forest->manifests) {
    std::cerr << root << " " << manifest.dump() << "\n";
  }
  return WriteFile(options.out, *bytes);
}

absl::StatusOr<PrivacyForest> LoadForest(const std::string& path) {
  absl::StatusOr<std::string> bytes = ReadFile(path);
  if (!bytes.ok()) return bytes.status();
  return DeserializeForest(*bytes);
}

struct ObfuscateOptions {
  std::string forest;
  std::string policy;
  std::string real;
  uint64_t seed = 0;
  std::string mode = "enforce_policy";
};

absl::Status Obfuscate(const ObfuscateOptions& options) {
  absl::StatusOr<PrivacyForest> forest = LoadForest(options.forest);
  if (!forest.ok()) return forest.status();
  absl::StatusOr<std::string> text = ReadFile(options.policy);
  if (!text.ok()) return text.status();
  json policy_json = json::parse(*text, nullptr, false);
  if (policy_json.is_discarded()) {
    return absl::InvalidArgumentError("policy is not JSON");
  }
  absl::StatusOr<Policy> policy = Policy::FromJson(policy_json);
  if (!policy.ok()) return policy.status();
  absl::StatusOr<OverflowMode> mode = ParseOverflowMode(options.mode);
  if (!mode.ok()) return mode.status();
  absl::StatusOr<ObfuscationResult> result =
      GenerateObfuscatedLocation(*forest->tree, CellId(options.real), *policy,
                                 *forest, options.seed, *mode);
  if (!result.ok()) return result.status();
  std::cout << result->ToJson().dump(2) << "\n";
  return absl::OkStatus();
}

absl::Status Audit(const std::string& path, int delta) {
  absl::StatusOr<PrivacyForest> forest = LoadForest(path);
  if (!forest.ok()) return forest.status();
  if (delta < 0) delta = forest->delta;
  json out = json::object();
  bool clean = true;
  for (const auto& [root, z] : forest->entries) {
    json entry;
    absl::StatusOr<GeoIndReport> plain =
        AuditGeoInd(z, *forest->tree, forest->epsilon);
    if (!plain.ok()) return plain.status();
    entry["geo_ind_violations"] = plain->count();
    clean = clean && plain->count() == 0;
    if (z.size() > 1 && delta > 0) {
      absl::StatusOr<DistanceTable> d =
          DistanceTable::ForNodes(*forest->tree, z.node_ids());
      if (!d.ok()) return d.status();
      absl::StatusOr<GeoIndReport> pruned = AuditDeltaPrunable(
          z, *d, forest->epsilon, std::min<int>(delta, z.size() - 1));
      if (!pruned.ok()) return pruned.status();
      entry["delta_violations"] = pruned->count();
      clean = clean && pruned->count() == 0;
    }
    out[root.str()] = entry;
  }
  std::cout << out.dump(2) << "\n";
  return clean ? absl::OkStatus()
               : absl::FailedPreconditionError("audit found violations");
}

struct BenchOptions {
  std::string experiment;
  std::string tree;
  std::string subtree;
  uint64_t seed = 1;
  int max_iterations = 0;
  std::string out = "-";
};

absl::Status Bench(const BenchOptions& options) {
  absl::StatusOr<LocationTree> tree = LoadTree(options.tree);
  if (!tree.ok()) return tree.status();
  const CellId subtree(options.subtree);
  absl::StatusOr<ExperimentReport> report;
  if (options.experiment == "convergence") {
    ConvergenceParams params;
    params.subtree = subtree;
    params.seed = options.seed;
    if (options.max_iterations > 0) params.max_iterations = options.max_iterations;
    report = RunConvergenceExperiment(*tree, params);
  } else if (options.experiment == "epsilon-sweep") {
    EpsilonSweepParams params;
    params.subtree = subtree;
    params.seed = options.seed;
    if (options.max_iterations > 0) params.max_iterations = options.max_iterations;
    report = RunEpsilonSweep(*tree, params);
  } else if (options.experiment == "delta-sweep") {
    DeltaSweepParams params;
    params.subtree = subtree;
    params.seed = options.seed;
    if (options.max_iterations > 0) params.max_iterations = options.max_iterations;
    report = RunDeltaSweep(*tree, params);
  } else {
    ViolationParams params;
    params.subtree = subtree;
    params.seed = options.seed;
    if (options.max_iterations > 0) params.max_iterations = options.max_iterations;
    report = RunViolationExperiment(*tree, params);
  }
  if (!report.ok()) return report.status();
  std::cerr << report->name << ": checks "
            << (report->AllChecksPass() ? "pass" : "FAIL") << "\n";
  return WriteFile(options.out, report->ToJson().dump(2) + "\n");
}

int Main(int argc, char** argv) {
  CLI::App app{"Tree-based location obfuscation"};
  app.require_subcommand(1);

  TreeOptions tree_options;
  CLI::App* build = app.add_subcommand("build-tree", "Build a grid tree");
  build->add_option("--branching", tree_options.branching)->capture_default_str();
  build->add_option("--height", tree_options.height)->capture_default_str();
  build->add_option("--cell-size", tree_options.cell_size)->capture_default_str();
  build->add_option("--metric", tree_options.metric)
      ->check(CLI::IsMember({"euclidean", "hop"}))
      ->capture_default_str();
  build->add_option("--attributes", tree_options.attributes,
                    "JSON table {cell id: {name: value}}");
  build->add_option("--out", tree_options.out)->capture_default_str();

  IngestOptions ingest_options;
  CLI::App* ingest = app.add_subcommand("ingest", "Estimate leaf priors");
  ingest->add_option("--tree", ingest_options.tree, "default: desk tree");
  ingest->add_option("--checkins", ingest_options.checkins, "check-in CSV");
  ingest->add_option("--synth", ingest_options.synth,
                     "synthesize this many check-ins instead");
  ingest->add_option("--seed", ingest_options.seed)->capture_default_str();
  ingest->add_option("--skew", ingest_options.skew)->capture_default_str();
  ingest->add_option("--x-scale", ingest_options.mapping.x_scale);
  ingest->add_option("--x-offset", ingest_options.mapping.x_offset);
  ingest->add_option("--y-scale", ingest_options.mapping.y_scale);
  ingest->add_option("--y-offset", ingest_options.mapping.y_offset);
  ingest->add_option("--checkins-out", ingest_options.checkins_out);
  ingest->add_option("--out", ingest_options.out)->capture_default_str();

  SynthesizeOptions synth_options;
  CLI::App* synth = app.add_subcommand("synthesize", "Build a privacy forest");
  synth->add_option("--tree", synth_options.tree, "default: desk tree");
  synth->add_option("--privacy-level", synth_options.privacy_level)
      ->capture_default_str();
  synth->add_option("--epsilon", synth_options.epsilon)->capture_default_str();
  synth->add_option("--delta", synth_options.delta)->capture_default_str();
  synth->add_option("--targets", synth_options.num_targets)->capture_default_str();
  synth->add_option("--seed", synth_options.seed, "target selection seed")
      ->capture_default_str();
  synth->add_option("--threshold", synth_options.threshold)->capture_default_str();
  synth->add_option("--max-iterations", synth_options.max_iterations)
      ->capture_default_str();
  synth->add_option("--rpb-mode", synth_options.rpb_mode)
      ->check(CLI::IsMember({"exact", "approximate", "auto"}))
      ->capture_default_str();
  synth->add_option("--out", synth_options.out)->required();

  ObfuscateOptions obf_options;
  CLI::App* obf = app.add_subcommand("obfuscate", "Sample a reported location");
  obf->add_option("--forest", obf_options.forest)->required();
  obf->add_option("--policy", obf_options.policy)->required();
  obf->add_option("--real", obf_options.real)->required();
  obf->add_option("--seed", obf_options.seed)->required();
  obf->add_option("--mode", obf_options.mode)
      ->check(CLI::IsMember({"enforce_policy", "enforce_privacy"}))
      ->capture_default_str();

  std::string audit_forest;
  int audit_delta = -1;
  CLI::App* audit = app.add_subcommand("audit", "Audit every forest entry");
  audit->add_option("--forest", audit_forest)->required();
  audit->add_option("--delta", audit_delta, "default: the forest's delta");

  BenchOptions bench_options;
  CLI::App* bench = app.add_subcommand("bench", "Run an experiment");
  bench->add_option("experiment", bench_options.experiment)
      ->required()
      ->check(CLI::IsMember(
          {"convergence", "epsilon-sweep", "delta-sweep", "violations"}));
  bench->add_option("--tree", bench_options.tree, "default: desk tree");
  bench->add_option("--subtree", bench_options.subtree,
                    "default: first node at level 1");
  bench->add_option("--seed", bench_options.seed)->capture_default_str();
  bench->add_option("--max-iterations", bench_options.max_iterations,
                    "override the experiment's round cap");
  bench->add_option("--out", bench_options.out)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  if (*build) return Report(BuildTree(tree_options));
  if (*ingest) return Report(Ingest(ingest_options));
  if (*synth) return Report(Synthesize(synth_options));
  if (*obf) return Report(Obfuscate(obf_options));
  if (*audit) return Report(Audit(audit_forest, audit_delta));
  return Report(Bench(bench_options));
}

}  // namespace
}  // namespace treeobf

int main(int argc, char** argv) { return treeobf::Main(argc, argv); }
