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
#include "treeobf/bench.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "absl/strings/str_cat.h"
#include "absl/strings/str_format.h"
#include "treeobf/customization.h"

namespace treeobf {
namespace {

using json = nlohmann::json;

double Uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

struct Subtree {
  CellId root;
  std::vector<CellId> leaves;
  std::vector<double> priors;
};

absl::StatusOr<Subtree> ResolveSubtree(const LocationTree& tree,
                                       const CellId& requested) {
  Subtree subtree;
  if (requested.empty()) {
    absl::StatusOr<std::vector<CellId>> level1 = tree.NodesAtLevel(1);
    if (!level1.ok()) return level1.status();
    subtree.root = level1->front();
  } else {
    subtree.root = requested;
  }
  absl::StatusOr<std::vector<CellId>> leaves = tree.LeavesUnder(subtree.root);
  if (!leaves.ok()) return leaves.status();
  subtree.leaves = *std::move(leaves);
  absl::StatusOr<std::vector<double>> priors =
      SubtreePriors(tree, subtree.leaves);
  if (!priors.ok()) return priors.status();
  subtree.priors = *std::move(priors);
  return subtree;
}

json TargetsJson(const TargetSet& targets) {
  json out = json::array();
  for (const CellId& t : targets.targets) out.push_back(t.str());
  return out;
}

json Provenance(const LocationTree& tree, const Subtree& subtree,
                uint64_t seed) {
  return {{"tree_hash", tree.Hash()},
          {"subtree", subtree.root.str()},
          {"leaves", subtree.leaves.size()},
          {"seed", seed}};
}

SynthesisConfig MakeConfig(double epsilon, int delta, TargetSet targets,
                           int max_iterations, RpbMode mode) {
  SynthesisConfig config;
  config.epsilon = epsilon;
  config.delta = delta;
  config.targets = std::move(targets);
  config.max_iterations = max_iterations;
  config.rpb_mode = mode;
  return config;
}

json FailedCell(json cell, const absl::Status& status) {
  cell["status"] = "failed";
  cell["reason"] = status.ToString();
  return cell;
}

// a <= b up to a relative slack.
bool LeqWithin(double a, double b, double tolerance) {
  return a <= b + tolerance * std::max(std::abs(a), std::abs(b));
}

}  // namespace

TreeConfig DeskTreeConfig() {
  TreeConfig config;
  config.branching = 25;
  config.height = 2;
  config.cell_size = 0.02;
  return config;
}

std::vector<CheckInRecord> SynthCheckIns(const LocationTree& tree, int64_t n,
                                         uint64_t seed, double skew,
                                         const GeoAffine& mapping) {
  const std::vector<CellId>& leaves = tree.leaves();
  std::mt19937_64 rng(seed);
  std::vector<size_t> order(leaves.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<double> weights(leaves.size());
  for (size_t rank = 0; rank < order.size(); ++rank) {
    weights[order[rank]] = std::pow(static_cast<double>(rank + 1), -skew);
  }
  std::discrete_distribution<size_t> pick(weights.begin(), weights.end());

  std::vector<CheckInRecord> records;
  records.reserve(n);
  for (int64_t i = 0; i < n; ++i) {
    const TreeNode& leaf = *tree.Find(leaves[pick(rng)]);
    // Stay clear of cell borders so the degree round trip cannot flip cells.
    const double x = leaf.centroid.x + (Uniform01(rng) * 0.998 - 0.499) * leaf.extent.x;
    const double y = leaf.centroid.y + (Uniform01(rng) * 0.998 - 0.499) * leaf.extent.y;
    CheckInRecord record;
    record.user = absl::StrCat("u", rng() % 1000);
    record.timestamp = absl::StrFormat("2010-%02d-%02dT%02d:%02d:00Z",
                                       1 + (i / 40320) % 12, 1 + (i / 1440) % 28,
                                       (i / 60) % 24, i % 60);
    record.lat = mapping.ToLat(y);
    record.lon = mapping.ToLon(x);
    record.location_id = leaf.id.str();
    records.push_back(std::move(record));
  }
  return records;
}

TargetSet RandomTargets(const LocationTree& tree, int count, uint64_t seed) {
  const std::vector<CellId>& leaves = tree.leaves();
  std::mt19937_64 rng(seed);
  TargetSet targets;
  if (count <= static_cast<int>(leaves.size())) {
    std::vector<CellId> pool = leaves;
    for (int i = 0; i < count; ++i) {
      const size_t j = i + rng() % (pool.size() - i);
      std::swap(pool[i], pool[j]);
    }
    targets.targets.assign(pool.begin(), pool.begin() + count);
  } else {
    for (int i = 0; i < count; ++i) {
      targets.targets.push_back(leaves[rng() % leaves.size()]);
    }
  }
  std::sort(targets.targets.begin(), targets.targets.end());
  return targets;
}

bool ExperimentReport::AllChecksPass() const {
  for (const auto& [name, value] : checks.items()) {
    if (!value.is_boolean() || !value.get<bool>()) return false;
  }
  return true;
}

json ExperimentReport::ToJson() const {
  return {{"schema_version", kReportSchemaVersion},
          {"experiment", experiment},
          {"name", name},
          {"parameters", parameters},
          {"cells", cells},
          {"checks", checks},
          {"all_checks_pass", AllChecksPass()},
          {"provenance", provenance},
          {"environment", EnvironmentFingerprint()}};
}

json EnvironmentFingerprint() {
  return {{"compiler", __VERSION__},
          {"cplusplus", static_cast<int64_t>(__cplusplus)},
#ifdef NDEBUG
          {"assertions", false},
#else
          {"assertions", true},
#endif
          {"hardware_threads", std::thread::hardware_concurrency()},
          {"lp_solver", "treeobf bounded dual simplex"}};
}

absl::StatusOr<ExperimentReport> RunConvergenceExperiment(
    const LocationTree& tree, const ConvergenceParams& params) {
  absl::StatusOr<Subtree> subtree = ResolveSubtree(tree, params.subtree);
  if (!subtree.ok()) return subtree.status();
  const TargetSet targets = RandomTargets(tree, params.num_targets, params.seed);

  ExperimentReport report;
  report.experiment = 1;
  report.name = "convergence";
  report.parameters = {{"epsilon", params.epsilon},
                       {"deltas", params.deltas},
                       {"num_targets", params.num_targets},
                       {"threshold", params.threshold},
                       {"max_iterations", params.max_iterations},
                       {"iteration_budget", params.iteration_budget},
                       {"rpb_mode", RpbModeName(params.rpb_mode)},
                       {"targets", TargetsJson(targets)}};
  report.provenance = Provenance(tree, *subtree, params.seed);

  for (int delta : params.deltas) {
    const std::string check = absl::StrCat("delta_", delta, "_within_budget");
    json cell = {{"delta", delta}};
    SynthesisConfig config = MakeConfig(params.epsilon, delta, targets,
                                        params.max_iterations, params.rpb_mode);
    config.convergence_threshold = params.threshold;
    absl::StatusOr<SynthesisResult> result =
        GenerateRobustMatrix(subtree->leaves, tree, subtree->priors, config);
    if (!result.ok()) {
      report.cells.push_back(FailedCell(std::move(cell), result.status()));
      report.checks[check] = false;
      continue;
    }
    json rounds = nullptr;
    for (size_t t = 0; t < result->divergence_trace.size(); ++t) {
      if (result->divergence_trace[t] < params.threshold) {
        rounds = static_cast<int>(t + 1);
        break;
      }
    }
    cell.update(result->Manifest(config));
    cell["status"] = "ok";
    cell["rounds_to_threshold"] = rounds;
    report.cells.push_back(cell);
    report.checks[check] =
        !rounds.is_null() && rounds.get<int>() <= params.iteration_budget;
  }
  return report;
}

absl::StatusOr<ExperimentReport> RunEpsilonSweep(
    const LocationTree& tree, const EpsilonSweepParams& params) {
  absl::StatusOr<Subtree> subtree = ResolveSubtree(tree, params.subtree);
  if (!subtree.ok()) return subtree.status();
  const TargetSet targets = RandomTargets(tree, params.num_targets, params.seed);

  ExperimentReport report;
  report.experiment = 2;
  report.name = "epsilon-sweep";
  report.parameters = {{"epsilons", params.epsilons},
                       {"deltas", params.deltas},
                       {"num_targets", params.num_targets},
                       {"max_iterations", params.max_iterations},
                       {"relative_tolerance", params.relative_tolerance},
                       {"rpb_mode", RpbModeName(params.rpb_mode)},
                       {"targets", TargetsJson(targets)}};
  report.provenance = Provenance(tree, *subtree, params.seed);

  const size_t ne = params.epsilons.size();
  const size_t nd = params.deltas.size();
  std::vector<std::vector<std::optional<double>>> loss(
      nd, std::vector<std::optional<double>>(ne));
  for (size_t d = 0; d < nd; ++d) {
    for (size_t e = 0; e < ne; ++e) {
      json cell = {{"epsilon", params.epsilons[e]}, {"delta", params.deltas[d]}};
      const SynthesisConfig config =
          MakeConfig(params.epsilons[e], params.deltas[d], targets,
                     params.max_iterations, params.rpb_mode);
      absl::StatusOr<SynthesisResult> result =
          GenerateRobustMatrix(subtree->leaves, tree, subtree->priors, config);
      absl::StatusOr<double> value =
          result.ok() ? ExpectedLoss(result->matrix, tree, subtree->priors, targets)
                      : absl::StatusOr<double>(result.status());
      if (!value.ok()) {
        report.cells.push_back(FailedCell(std::move(cell), value.status()));
        continue;
      }
      loss[d][e] = *value;
      cell["status"] = "ok";
      cell["loss"] = *value;
      cell["iterations"] = result->iterations;
      cell["converged"] = result->converged;
      cell["final_divergence"] =
          result->divergence_trace.empty() ? 0.0 : result->divergence_trace.back();
      report.cells.push_back(cell);
    }
  }

  const double tol = params.relative_tolerance;
  for (size_t d = 0; d < nd; ++d) {
    bool ok = true;
    for (size_t e = 0; e + 1 < ne; ++e) {
      ok = ok && loss[d][e] && loss[d][e + 1] &&
           LeqWithin(*loss[d][e + 1], *loss[d][e], tol);
    }
    report.checks[absl::StrCat("non_increasing_in_epsilon_delta_",
                               params.deltas[d])] = ok;
  }
  for (size_t e = 0; e < ne; ++e) {
    bool ok = true;
    for (size_t d = 0; d + 1 < nd; ++d) {
      ok = ok && loss[d][e] && loss[d + 1][e] &&
           LeqWithin(*loss[d][e], *loss[d + 1][e], tol);
    }
    report.checks[absl::StrFormat("ordered_in_delta_epsilon_%g",
                                  params.epsilons[e])] = ok;
  }
  return report;
}

absl::StatusOr<ExperimentReport> RunDeltaSweep(const LocationTree& tree,
                                               const DeltaSweepParams& params) {
  absl::StatusOr<Subtree> subtree = ResolveSubtree(tree, params.subtree);
  if (!subtree.ok()) return subtree.status();

  ExperimentReport report;
  report.experiment = 3;
  report.name = "delta-sweep";
  report.parameters = {{"max_delta", params.max_delta},
                       {"epsilon", params.epsilon},
                       {"repeats", params.repeats},
                       {"num_targets", params.num_targets},
                       {"max_iterations", params.max_iterations},
                       {"relative_tolerance", params.relative_tolerance},
                       {"rpb_mode", RpbModeName(params.rpb_mode)}};
  report.provenance = Provenance(tree, *subtree, params.seed);

  std::vector<double> sum(params.max_delta + 1, 0.0);
  std::vector<int> count(params.max_delta + 1, 0);
  for (int r = 0; r < params.repeats; ++r) {
    const uint64_t seed = params.seed + r;
    const TargetSet targets = RandomTargets(tree, params.num_targets, seed);
    for (int delta = 0; delta <= params.max_delta; ++delta) {
      json cell = {{"repeat", r}, {"seed", seed}, {"delta", delta}};
      const SynthesisConfig config = MakeConfig(
          params.epsilon, delta, targets, params.max_iterations, params.rpb_mode);
      absl::StatusOr<SynthesisResult> result =
          GenerateRobustMatrix(subtree->leaves, tree, subtree->priors, config);
      absl::StatusOr<double> value =
          result.ok() ? ExpectedLoss(result->matrix, tree, subtree->priors, targets)
                      : absl::StatusOr<double>(result.status());
      if (!value.ok()) {
        report.cells.push_back(FailedCell(std::move(cell), value.status()));
        continue;
      }
      sum[delta] += *value;
      ++count[delta];
      cell["status"] = "ok";
      cell["loss"] = *value;
      cell["iterations"] = result->iterations;
      cell["converged"] = result->converged;
      cell["manifest"] = result->Manifest(config);
      report.cells.push_back(cell);
    }
  }
  json means = json::array();
  bool complete = true;
  for (int delta = 0; delta <= params.max_delta; ++delta) {
    complete = complete && count[delta] == params.repeats;
    means.push_back(count[delta] > 0 ? json(sum[delta] / count[delta]) : json());
  }
  bool monotone = complete;
  for (int delta = 0; monotone && delta < params.max_delta; ++delta) {
    monotone = LeqWithin(sum[delta] / count[delta],
                         sum[delta + 1] / count[delta + 1],
                         params.relative_tolerance);
  }
  report.parameters["mean_loss"] = means;
  report.checks["all_repeats_completed"] = complete;
  report.checks["non_decreasing_in_delta"] = monotone;
  return report;
}

absl::StatusOr<ExperimentReport> RunViolationExperiment(
    const LocationTree& tree, const ViolationParams& params) {
  absl::StatusOr<Subtree> subtree = ResolveSubtree(tree, params.subtree);
  if (!subtree.ok()) return subtree.status();
  const TargetSet targets = RandomTargets(tree, params.num_targets, params.seed);
  const int k = static_cast<int>(subtree->leaves.size());

  ExperimentReport report;
  report.experiment = 4;
  report.name = "violations";
  report.parameters = {{"epsilon", params.epsilon},
                       {"removed_caps", params.removed_caps},
                       {"trials", params.trials},
                       {"num_targets", params.num_targets},
                       {"max_iterations", params.max_iterations},
                       {"rpb_mode", RpbModeName(params.rpb_mode)},
                       {"targets", TargetsJson(targets)}};
  report.provenance = Provenance(tree, *subtree, params.seed);
  absl::StatusOr<DistanceTable> distances =
      DistanceTable::ForNodes(tree, subtree->leaves);
  if (!distances.ok()) return distances.status();

  for (int cap : params.removed_caps) {
    const std::string prefix = absl::StrCat("cap_", cap, "_");
    absl::StatusOr<SynthesisResult> builds[2] = {
        GenerateRobustMatrix(
            subtree->leaves, tree, subtree->priors,
            MakeConfig(params.epsilon, 0, targets, params.max_iterations,
                       params.rpb_mode)),
        GenerateRobustMatrix(
            subtree->leaves, tree, subtree->priors,
            MakeConfig(params.epsilon, cap, targets, params.max_iterations,
                       params.rpb_mode))};
    const int built_delta[2] = {0, cap};
    std::vector<double> mean[2];
    for (int b = 0; b < 2; ++b) {
      mean[b].assign(cap + 1, std::nan(""));
      if (!builds[b].ok()) {
        report.cells.push_back(FailedCell(
            {{"cap", cap}, {"built_delta", built_delta[b]}}, builds[b].status()));
        continue;
      }
      // The same pruning draws for both builds.
      std::mt19937_64 rng(params.seed ^ (0x9e3779b97f4a7c15ULL * (cap + 1)));
      for (int r = 0; r <= cap && r < k; ++r) {
        int violations = 0;
        int violated_trials = 0;
        int infeasible = 0;
        for (int t = 0; t < params.trials; ++t) {
          std::vector<CellId> pool = subtree->leaves;
          // Position 0 holds the real location, never pruned.
          for (int i = 0; i <= r; ++i) {
            const size_t j = i + rng() % (pool.size() - i);
            std::swap(pool[i], pool[j]);
          }
          std::vector<CellId> prune(pool.begin() + 1, pool.begin() + 1 + r);
          absl::StatusOr<ObfuscationMatrix> pruned =
              PruneMatrix(builds[b]->matrix, prune);
          if (!pruned.ok()) {
            ++infeasible;
            continue;
          }
          absl::StatusOr<GeoIndReport> audit =
              AuditGeoInd(*pruned, tree, params.epsilon);
          if (!audit.ok()) return audit.status();
          violations += audit->count();
          violated_trials += audit->count() > 0;
        }
        const int audited = params.trials - infeasible;
        mean[b][r] = audited > 0 ? static_cast<double>(violations) / audited
                                 : std::nan("");
        report.cells.push_back({{"cap", cap},
                                {"built_delta", built_delta[b]},
                                {"removed", r},
                                {"status", "ok"},
                                {"violations", violations},
                                {"violated_trials", violated_trials},
                                {"infeasible_trials", infeasible},
                                {"mean_violations",
                                 audited > 0 ? json(mean[b][r]) : json()}});
      }
    }
    const bool both = builds[0].ok() && builds[1].ok();
    report.checks[prefix + "no_violations_without_pruning"] =
        both && mean[0][0] == 0.0 && mean[1][0] == 0.0;
    bool robust_clean = builds[1].ok();
    for (int r = 0; robust_clean && r <= cap && r < k; ++r) {
      robust_clean = !(mean[1][r] > 0.0);
    }
    report.checks[prefix + "robust_clean_up_to_delta"] = robust_clean;
    if (cap >= 3) {
      report.checks[prefix + "non_robust_exceeds_robust_at_3"] =
          both && mean[0][3] > mean[1][3];
    }
  }
  return report;
}

}  // namespace treeobf
