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
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/model.hpp"
#include "mmsim/policies.hpp"
#include "mmsim/profiles.hpp"

namespace mmsim {

enum class InstanceState { Starting, Active, Draining, Stopped };
std::string_view to_string(InstanceState s);

enum class TransferMedium { RDMA, TCP };
std::string_view to_string(TransferMedium m);
TransferMedium parse_transfer_medium(std::string_view s);

// Lognormal latency of pulling a request's image tokens (or KV cache) from
// the producing instance.
struct TransferModel {
  TransferMedium medium = TransferMedium::RDMA;
  double rdma_median_ms = 2.0;
  double rdma_sigma = 0.3939;  // puts P99 at 5 ms
  double tcp_median_ms = 100.0;
  double tcp_sigma = 0.2527;  // puts P99 at 180 ms

  double median_ms() const;
  double sigma() const;
  double sample(std::mt19937_64& rng) const;
  double quantile(double q) const;
};

struct WorkItem {
  std::uint64_t id = 0;
  std::uint64_t request_id = 0;
  StageKind stage = StageKind::Encode;
  std::int64_t tokens = 0;  // scheduling size
  std::int64_t text_tokens = 0;
  std::int64_t image_tokens = 0;
  int tiles = 0;
  int shard = -1;
  double enqueue_ms = 0.0;  // joined this queue
  double order_ms = 0.0;    // scheduler key (FIFO position, aging origin)
  double ready_ms = 0.0;    // transfer completion
  double aging_threshold_ms = 0.0;
  std::vector<std::uint64_t> deps;
};

struct DecodeMember {
  std::size_t request = 0;  // index into the log
  std::int64_t remaining = 0;
};

struct Instance {
  InstanceId id = 0;
  InstanceKind kind = InstanceKind::Text;
  int tp = 1;
  int server_id = -1;
  std::vector<int> gpus;
  int cpu_cores = 1;
  int max_batch = 1;
  int decode_max_batch = 1;
  InstanceState state = InstanceState::Active;
  double placed_ms = 0.0;
  double active_ms = 0.0;
  double stopped_ms = -1.0;

  std::vector<WorkItem> queue;        // GPU queue
  std::vector<WorkItem> in_service;   // current GPU batch
  double busy_until_ms = 0.0;
  std::vector<WorkItem> cpu_queue;    // preprocessing
  bool cpu_busy = false;
  std::int64_t pending_text_tokens = 0;
  std::int64_t pending_image_tokens = 0;
  int inbound = 0;  // decode admissions in flight towards this instance

  // Continuous-batching decode lane.
  std::vector<DecodeMember> decoding;
  std::vector<std::size_t> decode_waiting;
  double decode_t0_ms = 0.0;
  double decode_step_ms = 0.0;
  std::uint64_t decode_version = 0;

  bool idle() const;
  bool accepts_work() const { return state == InstanceState::Active; }
};

struct ClusterSpec {
  int servers = 4;
  int gpus_per_server = 8;
  int cpu_cores_per_server = 96;
};

struct ClusterState {
  std::vector<ServerState> servers;
  std::vector<Instance> instances;  // indexed by InstanceId, never erased
  double time_ms = 0.0;

  int gpus_total() const;
  int gpus_placed() const;  // instances not Stopped
};

struct InstanceSpec {
  InstanceKind kind = InstanceKind::Text;
  int tp = 1;
  int count = 1;
  int max_batch = 0;  // 0: derived from the profile and SLO
};

struct EngineConfig {
  ClusterSpec cluster;
  std::vector<InstanceSpec> instances;
  PolicySet policies;
  SLOSpec slo;
  TransferModel transfer;
  double horizon_ms = 3600000.0;
  double drain_ms = 600000.0;
  double start_delay_ms = 60000.0;
  double window_ms = 300000.0;
  std::uint64_t seed = 1;
  bool check_invariants = false;

  void validate() const;
};

struct ShardRecord {
  InstanceId instance = -1;
  int images = 0;
  int tiles = 0;
  double preprocess_start_ms = -1.0;
  double preprocess_end_ms = -1.0;
  double encode_start_ms = -1.0;
  double encode_end_ms = -1.0;
};

struct TbtSegment {
  double step_ms = 0.0;
  std::int64_t count = 0;
};

struct RequestRecord {
  std::uint64_t id = 0;
  double arrival_ms = 0.0;
  Modality modality = Modality::TextOnly;
  std::string service_id;
  std::int64_t text_tokens = 0;
  std::int64_t image_tokens = 0;
  int images = 0;
  int tiles = 0;
  std::int64_t output_tokens = 1;

  std::vector<ShardRecord> shards;
  double encode_end_ms = -1.0;
  double transfer_ms = 0.0;
  double transfer_end_ms = -1.0;
  double prefill_enqueue_ms = -1.0;
  double prefill_start_ms = -1.0;
  double prefill_end_ms = -1.0;
  double kv_transfer_ms = 0.0;
  double decode_start_ms = -1.0;
  double completion_ms = -1.0;
  InstanceId prefill_instance = -1;
  InstanceId decode_instance = -1;
  std::vector<TbtSegment> tbt;

  bool completed() const { return completion_ms >= 0.0; }
  bool has_first_token() const { return prefill_end_ms >= 0.0; }
  double ttft_ms() const { return prefill_end_ms - arrival_ms; }
  double preprocess_start_ms() const;
  double preprocess_end_ms() const;
  double encode_start_ms() const;
  // Nearest-rank (lower) P99 over this request's inter-token gaps; 0 when
  // only one token was produced.
  double tbt_p99_ms() const;
  double tbt_max_ms() const;
};

struct WindowRecord {
  double start_ms = 0.0;
  double end_ms = 0.0;
  std::map<InstanceKind, int> instances;  // placed, by kind
  int gpus = 0;                           // placed at window end
  double gpu_seconds = 0.0;
  std::size_t arrivals = 0;
  std::size_t completions = 0;
  std::size_t slo_met = 0;
  double attainment = 1.0;
  bool attainment_vacuous = true;
  double image_token_rate = 0.0;
  double text_token_rate = 0.0;
  std::map<StageKind, double> mean_queue_delay_ms;
  std::map<InstanceKind, int> targets;  // autoscaler decision, if any
  bool clamped = false;
  std::vector<std::string> notes;
};

struct AllocationPoint {
  double time_ms = 0.0;
  int gpus = 0;
};

struct MetricsLog {
  std::vector<RequestRecord> requests;  // in arrival order
  std::vector<WindowRecord> windows;
  std::vector<AllocationPoint> allocation;  // step function of placed GPUs
  double horizon_ms = 0.0;
  double end_ms = 0.0;
  double gpu_seconds = 0.0;  // over [0, horizon]
  std::size_t arrived = 0;
  std::size_t completed = 0;
  std::size_t in_flight = 0;
  std::uint64_t events = 0;
  std::vector<std::string> notes;
};

void write_requests_csv(const MetricsLog& log, const std::filesystem::path& path);
nlohmann::json windows_json(const MetricsLog& log);

// Thrown when work remains but no event can make progress.
class DeadlockError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Picks up to `max_batch` runnable GPU items in scheduler order, all of the
// first pick's stage. Returns queue indices in pick order.
std::vector<std::size_t> form_batch(const Instance& instance, double now_ms,
                                    SchedulerKind scheduler,
                                    const std::function<bool(std::uint64_t)>& dep_done);

// Image token sharding of one request, exposed for tests: returns the
// encode makespan when shards run in parallel on idle TP-`tp` instances.
double sharded_encode_makespan_ms(const Request& request, int n_shards, int tp,
                                  const LatencyProfile& profile);

class Simulator {
 public:
  Simulator(EngineConfig config, const LatencyProfile& profile);
  ~Simulator();
  Simulator(const Simulator&) = delete;
  Simulator& operator=(const Simulator&) = delete;

  // Requests must be sorted by arrival; arrivals at or after the horizon are
  // dropped.
  void load(const std::vector<Request>& requests);
  // Processes events with time <= t_ms.
  void run_until(double t_ms);
  // Runs to completion (or horizon + drain) and returns the log.
  MetricsLog finish();

  // Adds/drains instances to meet `decision.targets` at the current time.
  // Throws ConfigError when the decision leaves no prefill-capable instance.
  void apply_scaling(const ScalingDecision& decision);

  const ClusterState& cluster() const;
  const MetricsLog& log() const;
  double now() const;
  // Throws std::logic_error describing the first violated invariant.
  void check_invariants() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

MetricsLog run(const EngineConfig& config, const std::vector<Request>& workload,
               const LatencyProfile& profile);

}  // namespace mmsim
