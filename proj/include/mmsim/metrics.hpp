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
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/engine.hpp"

namespace mmsim {

// Nearest-rank (lower) quantile of an ascending-sorted sample: the value at
// rank ceil(q * n), 1-based. Throws std::invalid_argument on empty input.
double quantile_sorted(const std::vector<double>& sorted, double q);
double quantile(std::vector<double> values, double q);

struct Percentiles {
  std::size_t count = 0;
  double mean = 0.0;
  double p50 = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
};
Percentiles percentiles(std::vector<double> values);

struct LatencySummary {
  bool empty = true;
  std::size_t completed = 0;   // counted requests with a first token
  std::size_t in_flight = 0;   // arrived, not finished by the end of the run
  std::size_t warmup_excluded = 0;
  // Keys: "all", "text", "image".
  std::map<std::string, Percentiles> ttft;
  std::map<std::string, Percentiles> tbt;  // over every inter-token gap
  // Per-window P99 TTFT over requests arriving in the window.
  std::vector<double> window_p99_ttft;
};

// Requests arriving during the first `warmup_fraction` of the horizon are
// excluded.
LatencySummary summarize_latency(const MetricsLog& log, double warmup_fraction = 0.1,
                                 double window_ms = 300000.0);

struct AttainmentWindow {
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::size_t completed = 0;
  std::size_t met = 0;
  double attainment = 1.0;
  bool vacuous = true;
};

// Per window (by completion time), the fraction of completed requests that
// meet both the TTFT and TBT objective.
std::vector<AttainmentWindow> slo_attainment(const MetricsLog& log, const SLOSpec& slo,
                                             double window_ms);
// Same over the whole run, after warm-up; unfinished requests count as misses.
double overall_attainment(const MetricsLog& log, const SLOSpec& slo,
                          double warmup_fraction = 0.1);

struct CostSummary {
  double gpu_seconds = 0.0;
  int peak_gpus = 0;
  std::vector<std::pair<double, int>> timeline;  // (window start ms, GPUs)
  std::vector<double> window_gpu_seconds;
};
CostSummary cost_summary(const MetricsLog& log, double window_ms);

// Steady-state feasibility used by the throughput search: per-modality P99
// TTFT and P99 TBT within the objectives. Unfinished requests count as
// infinitely late.
struct Feasibility {
  bool feasible = false;
  double p99_ttft_text_ms = 0.0;
  double p99_ttft_image_ms = 0.0;
  double p99_tbt_ms = 0.0;
};
Feasibility check_feasibility(const MetricsLog& log, const SLOSpec& slo,
                              double warmup_fraction = 0.1);

struct ThroughputProbe {
  double load_scale = 0.0;
  double rate = 0.0;  // requests/sec offered
  bool feasible = false;
};

struct ThroughputResult {
  double rate = 0.0;        // largest feasible offered requests/sec
  double load_scale = 0.0;  // multiplier achieving it
  bool infeasible = false;  // even the minimum probed load fails
  std::vector<ThroughputProbe> probes;
};

struct ThroughputSearch {
  double initial_scale = 1.0;
  double min_scale = 1.0 / 64.0;
  double max_scale = 1024.0;
  double tolerance = 0.02;  // relative, on the rate
};

// Bisection on a load multiplier. `probe(scale)` returns the offered rate and
// whether the configuration meets its objectives at that scale (worst case
// over its seeds).
ThroughputResult max_throughput(
    const std::function<ThroughputProbe(double load_scale)>& probe,
    const ThroughputSearch& search = {});

nlohmann::json to_json(const Percentiles& p);
nlohmann::json to_json(const LatencySummary& s);
nlohmann::json to_json(const CostSummary& c);

}  // namespace mmsim
