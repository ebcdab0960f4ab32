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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmsim/model.hpp"
#include "mmsim/profiles.hpp"
#include "mmsim/workload.hpp"

namespace mmsim {

using InstanceId = std::int32_t;

enum class RouterKind { RoundRobin, LeastPendingModalityAware };
enum class SchedulerKind { FIFO, SLOPriority };
enum class AutoscalerKind { None, TokenAware };
enum class PlacementKind { Spread, ColocatePreferred };
// MonolithPD keeps encoders inside prefill instances while decode runs on a
// separate pool.
enum class Topology { Monolith, Decoupled, DecoupledPD, MonolithPD };

enum class InstanceKind { Image, Text, Prefill, Decode, Monolith, MonolithPrefill };

std::string_view to_string(RouterKind k);
std::string_view to_string(SchedulerKind k);
std::string_view to_string(AutoscalerKind k);
std::string_view to_string(PlacementKind k);
std::string_view to_string(Topology t);
std::string_view to_string(InstanceKind k);
RouterKind parse_router(std::string_view s);
SchedulerKind parse_scheduler(std::string_view s);
AutoscalerKind parse_autoscaler(std::string_view s);
PlacementKind parse_placement(std::string_view s);
Topology parse_topology(std::string_view s);
InstanceKind parse_instance_kind(std::string_view s);

bool is_monolithic(Topology t);
bool is_pd(Topology t);
// The instance kinds a topology deploys, in placement priority order.
std::vector<InstanceKind> kinds_for(Topology t);
// Kind that receives image-bearing requests first.
InstanceKind image_entry_kind(Topology t);
// Kind that runs prefill.
InstanceKind prefill_kind(Topology t);

struct PolicySet {
  RouterKind router = RouterKind::LeastPendingModalityAware;
  SchedulerKind scheduler = SchedulerKind::SLOPriority;
  AutoscalerKind autoscaler = AutoscalerKind::None;
  PlacementKind placement = PlacementKind::ColocatePreferred;
  Topology topology = Topology::Decoupled;
  int max_fanout = 8;
  double aging_fraction = 0.5;  // of the item's TTFT SLO
  double attainment_threshold = 0.99;
  double scale_down_utilization = 0.7;
  int scale_down_windows = 2;
  // Multiplier applied to a stage's load estimate after a missed window, and
  // its per-window decay back toward 1.
  double headroom_growth = 1.5;
  double headroom_decay = 0.99;

  void validate() const;
};

// ---------------------------------------------------------------- routing

struct InstanceLoad {
  InstanceId id = 0;
  std::int64_t pending_text_tokens = 0;
  std::int64_t pending_image_tokens = 0;
};

struct ImageShard {
  std::vector<int> image_indices;
  int tiles = 0;
  std::int64_t image_tokens = 0;
};

// Greedy largest-first partition of a request's images into at most
// `n_shards` shards balanced by tile count. Empty shards are dropped, so a
// single-image request always yields exactly one shard.
std::vector<ImageShard> encode_shard(const Request& request, int n_shards);

struct ShardAssignment {
  InstanceId instance = 0;
  ImageShard shard;
};

// Splits the request's images over the least image-token-loaded instances
// (LeastPending) or the next instances in rotation (RoundRobin). `pool`
// holds Active instances only; an empty pool yields no assignment.
std::vector<ShardAssignment> route_image(const Request& request,
                                         const std::vector<InstanceLoad>& pool,
                                         RouterKind router, int max_fanout,
                                         std::size_t& rr_cursor);

// DecOnly balances on total pending tokens, CroAttn on pending text tokens.
// Returns nullopt for an empty pool.
std::optional<InstanceId> route_text(const std::vector<InstanceLoad>& pool,
                                     Architecture architecture,
                                     RouterKind router, std::size_t& rr_cursor);

// ------------------------------------------------------------- scheduling

struct QueuedItemView {
  std::int64_t tokens = 0;
  double enqueue_ms = 0.0;
  double aging_threshold_ms = 0.0;
  std::uint64_t tie_break = 0;
};

// Index of the item to run next among runnable `items`, or -1 when empty.
int schedule_next(const std::vector<QueuedItemView>& items, double now_ms,
                  SchedulerKind scheduler);

// ------------------------------------------------------------ autoscaling

struct LoadWindow {
  double window_ms = 300000.0;
  double image_token_rate = 0.0;  // tokens/sec
  double text_token_rate = 0.0;
  double total_token_rate = 0.0;
  double slo_attainment = 1.0;
  bool attainment_valid = false;
  // Mean queueing delay per stage over the window.
  std::map<StageKind, double> mean_queue_delay_ms;
};

struct ScalingDecision {
  std::map<InstanceKind, int> targets;
  std::map<InstanceKind, int> tp;
  std::map<InstanceKind, int> max_batch;
  bool clamped = false;
  std::vector<std::string> notes;

  int target(InstanceKind k) const {
    auto it = targets.find(k);
    return it == targets.end() ? 0 : it->second;
  }
  int gpus() const;
};

// Per-stage latency budgets derived from the TTFT SLO and the reference
// breakdown.
struct StageBudgets {
  double encode_ms = 0.0;
  double prefill_ms = 0.0;
};
StageBudgets stage_budgets(const LatencyProfile& profile, const SLOSpec& slo);

// Persistent scale-down guard state carried between autoscaler calls.
struct AutoscaleMemory {
  std::map<InstanceKind, int> low_windows;
  std::map<InstanceKind, double> headroom;  // >= 1, absent means 1
};

struct ClusterCapacity {
  int total_gpus = 0;
  std::map<InstanceKind, int> current;  // non-draining instances
};

ScalingDecision autoscale(const LoadWindow& window, const LatencyProfile& profile,
                          const SLOSpec& slo, const ClusterCapacity& cluster,
                          const PolicySet& policies,
                          const std::map<InstanceKind, int>& tp,
                          AutoscaleMemory& memory);

// Replica count for one stage: max(1, ceil(load / capacity)).
int replicas_for(double load_tokens_per_sec, double capacity_tokens_per_sec);

ScalingDecision initial_sizing(const WorkloadSummary& summary,
                               const LatencyProfile& profile, int image_tp,
                               int text_tp,
                               const ScalingDecision& overprovision);

struct ShardingChoice {
  int tp = 1;
  bool feasible = true;
};

// Maximizes capacity per GPU among TPs whose single-request latency fits the
// stage budget; ties go to the smaller TP.
ShardingChoice select_sharding(InstanceKind kind, const LatencyProfile& profile,
                               double stage_budget_ms);

// Largest decode batch whose TBT meets the TBT SLO (prefill and encode use 1:
// their latency is linear in batch tokens, so batching adds no throughput).
int select_max_batch(InstanceKind kind, int tp, const LatencyProfile& profile,
                     const SLOSpec& slo);

// -------------------------------------------------------------- placement

struct ServerState {
  int server_id = 0;
  int gpus_total = 8;
  std::vector<bool> gpu_used;  // size gpus_total
  bool hosts_text = false;

  int gpus_free() const;
};

struct PlacementRequest {
  InstanceKind kind = InstanceKind::Text;
  int tp = 1;
};

struct PlacedInstance {
  PlacementRequest request;
  int server_id = -1;
  std::vector<int> gpus;
};

struct Placement {
  std::vector<PlacedInstance> placed;
  std::vector<PlacementRequest> unplaced;
  bool partial = false;
};

// Places `requests` onto `servers` (mutated to reflect the allocation).
// ColocatePreferred puts one text-side instance per server first and packs
// image instances beside it; leftovers go first-fit-decreasing by TP. Spread
// deals instances round-robin across servers.
Placement place(const std::vector<PlacementRequest>& requests,
                std::vector<ServerState>& servers, PlacementKind kind,
                std::size_t& spread_cursor);

}  // namespace mmsim
