/* Copyright 2026 The mmsim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/engine.hpp"
#include "mmsim/metrics.hpp"
#include "mmsim/profiles.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

struct CapacityOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  ThroughputSearch search;
};

struct ExperimentConfig {
  std::filesystem::path base_dir;
  ModelSpec model;
  LatencyProfile profile;
  EngineConfig engine;
  std::optional<std::filesystem::path> trace;
  std::optional<GeneratorConfig> generator;
  double load_scale = 1.0;
  double warmup_fraction = 0.1;
  std::vector<std::uint64_t> seeds{1};
  CapacityOptions capacity;
};

// Isolated single-request TTFT of the reference text-only and one-image
// requests on a monolithic TP-`tp` instance, and the batch-1 TBT.
SLOSpec derive_slo(const LatencyProfile& profile, int tp, int cpu_cores,
                   double slo_factor, double percentile = 0.99);

// Field paths use dots and brackets ("instances[1].tp"). Throws ConfigError
// whose message starts with the offending path.
ExperimentConfig parse_experiment(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir);

// Reads and parses a config file. Errors carry "file:line: field: message".
ExperimentConfig load_experiment(const std::filesystem::path& path);

std::vector<Request> build_workload(const ExperimentConfig& config, std::uint64_t seed,
                                    double load_scale);

struct SeedResult {
  std::uint64_t seed = 0;
  double load_scale = 1.0;
  double offered_rate = 0.0;  // requests/sec
  MetricsLog log;
  LatencySummary latency;
  CostSummary cost;
  Feasibility feasibility;
  double attainment = 1.0;
};

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, double load_scale);
// Seeds run concurrently; results are returned in `seeds` order.
std::vector<SeedResult> run_seeds(const ExperimentConfig& config,
                                  const std::vector<std::uint64_t>& seeds,
                                  double load_scale);

nlohmann::json summary_json(const ExperimentConfig& config,
                            const std::vector<SeedResult>& results);

ThroughputResult run_capacity(const ExperimentConfig& config);

// Rewrites one sweepable field. Axes: ratio ("I:T" image:text instance
// counts), image_fraction, load_scale, slo_factor, servers, transfer.
// Throws ConfigError for unknown axes or malformed values.
void apply_axis(ExperimentConfig& config, const std::string& axis, const std::string& value);
const std::vector<std::string>& sweep_axes();

// CLI commands. Return process exit codes (0 ok, 1 runtime error,
// 2 invalid configuration).
int cmd_simulate(const std::filesystem::path& config_path, const std::filesystem::path& out,
                 const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& msg,
                 std::ostream& err);
int cmd_capacity(const std::filesystem::path& config_path, const std::filesystem::path& out,
                 const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& msg,
                 std::ostream& err);
int cmd_sweep(const std::filesystem::path& config_path, const std::filesystem::path& out,
              const std::string& axis, const std::vector<std::string>& values,
              const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& msg,
              std::ostream& err);
// `targets_path` may be empty to use the built-in targets of `model_name`.
int cmd_calibrate(const std::filesystem::path& targets_path, const std::string& model_name,
                  const std::filesystem::path& out, bool force, std::ostream& msg,
                  std::ostream& err);

}  // namespace mmsim
