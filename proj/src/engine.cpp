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

#include "mmsim/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>
#include <unordered_map>

namespace mmsim {

std::string_view to_string(InstanceState s) {
  switch (s) {
    case InstanceState::Starting: return "Starting";
    case InstanceState::Active: return "Active";
    case InstanceState::Draining: return "Draining";
    case InstanceState::Stopped: return "Stopped";
  }
  return "?";
}

std::string_view to_string(TransferMedium m) {
  return m == TransferMedium::RDMA ? "RDMA" : "TCP";
}

TransferMedium parse_transfer_medium(std::string_view s) {
  if (s == "RDMA") return TransferMedium::RDMA;
  if (s == "TCP") return TransferMedium::TCP;
  throw ConfigError("unknown transfer medium '" + std::string(s) + "'");
}

double TransferModel::median_ms() const {
  return medium == TransferMedium::RDMA ? rdma_median_ms : tcp_median_ms;
}
double TransferModel::sigma() const {
  return medium == TransferMedium::RDMA ? rdma_sigma : tcp_sigma;
}
double TransferModel::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> z(0.0, 1.0);
  return median_ms() * std::exp(sigma() * z(rng));
}
double TransferModel::quantile(double q) const {
  // Inverse normal CDF via erfc bisection; only used for reporting.
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < q ? lo : hi) = mid;
  }
  return median_ms() * std::exp(sigma() * 0.5 * (lo + hi));
}

bool Instance::idle() const {
  return queue.empty() && in_service.empty() && cpu_queue.empty() && !cpu_busy &&
         decoding.empty() && decode_waiting.empty() && inbound == 0;
}

int ClusterState::gpus_total() const {
  int g = 0;
  for (const auto& s : servers) g += s.gpus_total;
  return g;
}

int ClusterState::gpus_placed() const {
  int g = 0;
  for (const auto& i : instances) {
    if (i.state != InstanceState::Stopped) g += i.tp;
  }
  return g;
}

void EngineConfig::validate() const {
  if (cluster.servers < 1) throw ConfigError("cluster.servers must be >= 1");
  if (cluster.gpus_per_server < 1) throw ConfigError("cluster.gpus_per_server must be >= 1");
  if (cluster.cpu_cores_per_server < 1) {
    throw ConfigError("cluster.cpu_cores_per_server must be >= 1");
  }
  if (!(horizon_ms > 0.0)) throw ConfigError("horizon_ms must be > 0");
  if (drain_ms < 0.0) throw ConfigError("drain_ms must be >= 0");
  if (start_delay_ms < 0.0) throw ConfigError("start_delay_ms must be >= 0");
  if (!(window_ms > 0.0)) throw ConfigError("window_ms must be > 0");
  policies.validate();
  const auto kinds = kinds_for(policies.topology);
  std::map<InstanceKind, int> counts;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& spec = instances[i];
    const std::string where = "instances[" + std::to_string(i) + "]";
    if (std::find(kinds.begin(), kinds.end(), spec.kind) == kinds.end()) {
      throw ConfigError(where + ".kind: " + std::string(to_string(spec.kind)) +
                        " is not part of topology " +
                        std::string(to_string(policies.topology)));
    }
    if (spec.tp < 1 || spec.tp > cluster.gpus_per_server) {
      throw ConfigError(where + ".tp must be in [1, gpus_per_server]");
    }
    if (spec.count < 0) throw ConfigError(where + ".count must be >= 0");
    if (spec.max_batch < 0) throw ConfigError(where + ".max_batch must be >= 0");
    counts[spec.kind] += spec.count;
  }
  for (InstanceKind k : kinds) {
    if (counts[k] < 1) {
      throw ConfigError("instances: topology " +
                        std::string(to_string(policies.topology)) +
                        " needs at least one " + std::string(to_string(k)) +
                        " instance");
    }
  }
  slo.validate();
}

// ------------------------------------------------------------ RequestRecord

double RequestRecord::preprocess_start_ms() const {
  double t = -1.0;
  for (const auto& s : shards) {
    if (s.preprocess_start_ms >= 0.0 && (t < 0.0 || s.preprocess_start_ms < t)) {
      t = s.preprocess_start_ms;
    }
  }
  return t;
}

double RequestRecord::preprocess_end_ms() const {
  double t = -1.0;
  for (const auto& s : shards) t = std::max(t, s.preprocess_end_ms);
  return t;
}

double RequestRecord::encode_start_ms() const {
  double t = -1.0;
  for (const auto& s : shards) {
    if (s.encode_start_ms >= 0.0 && (t < 0.0 || s.encode_start_ms < t)) {
      t = s.encode_start_ms;
    }
  }
  return t;
}

double RequestRecord::tbt_p99_ms() const {
  std::int64_t n = 0;
  for (const auto& s : tbt) n += s.count;
  if (n == 0) return 0.0;
  std::vector<TbtSegment> sorted = tbt;
  std::sort(sorted.begin(), sorted.end(),
            [](const TbtSegment& a, const TbtSegment& b) { return a.step_ms < b.step_ms; });
  const auto rank = static_cast<std::int64_t>(std::ceil(0.99 * static_cast<double>(n)));
  std::int64_t seen = 0;
  for (const auto& s : sorted) {
    seen += s.count;
    if (seen >= rank) return s.step_ms;
  }
  return sorted.back().step_ms;
}

double RequestRecord::tbt_max_ms() const {
  double m = 0.0;
  for (const auto& s : tbt) m = std::max(m, s.step_ms);
  return m;
}

// ---------------------------------------------------------------- helpers

std::vector<std::size_t> form_batch(const Instance& instance, double now_ms,
                                    SchedulerKind scheduler,
                                    const std::function<bool(std::uint64_t)>& dep_done) {
  std::vector<std::size_t> runnable;
  for (std::size_t i = 0; i < instance.queue.size(); ++i) {
    const auto& item = instance.queue[i];
    if (item.ready_ms > now_ms) continue;
    bool ok = true;
    for (auto d : item.deps) {
      if (!dep_done(d)) {
        ok = false;
        break;
      }
    }
    if (ok) runnable.push_back(i);
  }
  std::vector<std::size_t> batch;
  if (runnable.empty()) return batch;
  std::vector<QueuedItemView> views;
  views.reserve(runnable.size());
  for (auto i : runnable) {
    const auto& item = instance.queue[i];
    views.push_back({item.tokens, item.order_ms, item.aging_threshold_ms, item.id});
  }
  const int first = schedule_next(views, now_ms, scheduler);
  const StageKind stage = instance.queue[runnable[first]].stage;
  batch.push_back(runnable[first]);
  std::vector<bool> taken(runnable.size(), false);
  taken[first] = true;
  while (static_cast<int>(batch.size()) < std::max(1, instance.max_batch)) {
    std::vector<QueuedItemView> rest;
    std::vector<std::size_t> pos;
    for (std::size_t j = 0; j < runnable.size(); ++j) {
      if (taken[j] || instance.queue[runnable[j]].stage != stage) continue;
      rest.push_back(views[j]);
      pos.push_back(j);
    }
    if (rest.empty()) break;
    const int pick = schedule_next(rest, now_ms, scheduler);
    taken[pos[pick]] = true;
    batch.push_back(runnable[pos[pick]]);
  }
  return batch;
}

double sharded_encode_makespan_ms(const Request& request, int n_shards, int tp,
                                  const LatencyProfile& profile) {
  double makespan = 0.0;
  for (const auto& shard : encode_shard(request, n_shards)) {
    makespan = std::max(makespan, encode_latency_ms(shard.tiles, tp, profile));
  }
  return makespan;
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

enum class EventType {
  InstanceUp = 0,
  GpuDone = 1,
  CpuDone = 2,
  DecodeStep = 3,
  ItemReady = 4,
  DecodeAdmit = 5,
  Arrival = 6,
  Tick = 7,
};

struct Event {
  double t = 0.0;
  EventType type = EventType::Arrival;
  std::uint64_t request_id = 0;
  std::uint64_t seq = 0;
  InstanceId instance = -1;
  std::uint64_t aux = 0;
};

struct EventLater {
  bool operator()(const Event& a, const Event& b) const {
    if (a.t != b.t) return a.t > b.t;
    if (a.type != b.type) return static_cast<int>(a.type) > static_cast<int>(b.type);
    if (a.request_id != b.request_id) return a.request_id > b.request_id;
    return a.seq > b.seq;
  }
};

struct RequestRuntime {
  int shards_left = 0;
  bool routed = false;
};

struct PendingPrefill {
  std::size_t request = 0;
  double ready_ms = 0.0;
};

bool has_decode_lane(InstanceKind k) {
  return k == InstanceKind::Text || k == InstanceKind::Monolith ||
         k == InstanceKind::Decode;
}

}  // namespace

struct Simulator::Impl {
  EngineConfig config;
  LatencyProfile profile;
  ClusterState cluster;
  MetricsLog log;
  std::vector<Request> requests;
  std::vector<RequestRuntime> runtime;
  std::vector<char> item_done;
  std::uint64_t next_item = 0;
  std::uint64_t next_seq = 0;
  std::priority_queue<Event, std::vector<Event>, EventLater> events;
  std::size_t rr_image = 0, rr_text = 0, rr_decode = 0, spread_cursor = 0;
  std::deque<std::size_t> backlog_image;
  std::deque<PendingPrefill> backlog_prefill;
  std::deque<std::size_t> backlog_decode;
  std::map<InstanceKind, int> kind_tp;
  std::map<InstanceKind, int> kind_max_batch;
  AutoscaleMemory memory;
  std::size_t window_index = 0;
  double window_start = 0.0;
  std::vector<std::size_t> window_completions;
  std::size_t window_arrivals = 0;
  double window_image_tokens = 0.0, window_text_tokens = 0.0;
  std::map<StageKind, std::pair<double, std::size_t>> window_delay;
  std::vector<std::string> window_notes;
  std::map<InstanceKind, int> window_targets;
  bool window_clamped = false;
  bool loaded = false;
  bool finished = false;

  Impl(EngineConfig c, const LatencyProfile& p) : config(std::move(c)), profile(p) {
    config.validate();
    log.horizon_ms = config.horizon_ms;
    for (int s = 0; s < config.cluster.servers; ++s) {
      ServerState st;
      st.server_id = s;
      st.gpus_total = config.cluster.gpus_per_server;
      st.gpu_used.assign(st.gpus_total, false);
      cluster.servers.push_back(std::move(st));
    }
    std::vector<PlacementRequest> reqs;
    for (const auto& spec : config.instances) {
      check_tp(spec.kind, spec.tp);
      if (kind_tp.count(spec.kind) && kind_tp[spec.kind] != spec.tp) {
        throw ConfigError("instances: all " + std::string(to_string(spec.kind)) +
                          " instances must share one TP degree");
      }
      kind_tp[spec.kind] = spec.tp;
      if (spec.max_batch > 0) kind_max_batch[spec.kind] = spec.max_batch;
      for (int n = 0; n < spec.count; ++n) reqs.push_back({spec.kind, spec.tp});
    }
    auto placement = place(reqs, cluster.servers, config.policies.placement, spread_cursor);
    if (placement.partial) {
      int need = 0;
      for (const auto& r : reqs) need += r.tp;
      throw ConfigError("instances: cannot place " +
                        std::to_string(placement.unplaced.size()) +
                        " instance(s); requested " + std::to_string(need) +
                        " GPUs on " + std::to_string(cluster.gpus_total()) +
                        " available");
    }
    for (auto& placed : placement.placed) {
      add_instance(placed, InstanceState::Active, 0.0);
    }
    record_allocation(0.0);
    if (config.check_invariants) check();
  }

  void check_tp(InstanceKind kind, int tp) const {
    const auto& allowed = kind == InstanceKind::Image
                              ? profile.model.supported_tp_encoder
                              : profile.model.supported_tp_text;
    if (std::find(allowed.begin(), allowed.end(), tp) == allowed.end()) {
      throw ConfigError("instances: TP-" + std::to_string(tp) + " is not supported by " +
                        profile.model.name + " for " + std::string(to_string(kind)) +
                        " instances");
    }
    if (kind == InstanceKind::Monolith || kind == InstanceKind::MonolithPrefill) {
      if (!profile.model.supports_encoder_tp(tp)) {
        throw ConfigError("instances: TP-" + std::to_string(tp) +
                          " is not a supported encoder TP for " + profile.model.name);
      }
    }
  }

  Instance& add_instance(const PlacedInstance& placed, InstanceState state, double now) {
    Instance inst;
    inst.id = static_cast<InstanceId>(cluster.instances.size());
    inst.kind = placed.request.kind;
    inst.tp = placed.request.tp;
    inst.server_id = placed.server_id;
    inst.gpus = placed.gpus;
    inst.cpu_cores = std::max(1, config.cluster.cpu_cores_per_server * inst.tp /
                                     config.cluster.gpus_per_server);
    auto mb = kind_max_batch.find(inst.kind);
    inst.max_batch = mb == kind_max_batch.end() ? 1 : mb->second;
    if (has_decode_lane(inst.kind)) {
      inst.decode_max_batch =
          config.slo.tbt_base_ms > 0.0
              ? select_max_batch(InstanceKind::Decode, inst.tp, profile, config.slo)
              : profile.decode_max_batch();
    }
    inst.state = state;
    inst.placed_ms = now;
    inst.active_ms = state == InstanceState::Active ? now : now + config.start_delay_ms;
    cluster.instances.push_back(std::move(inst));
    return cluster.instances.back();
  }

  // ------------------------------------------------------------- events

  void push(EventType type, double t, std::uint64_t request_id, InstanceId inst,
            std::uint64_t aux = 0) {
    events.push(Event{t, type, request_id, next_seq++, inst, aux});
  }

  std::mt19937_64 request_rng(std::size_t ri, std::uint64_t stream) const {
    const std::uint64_t s =
        splitmix64(splitmix64(config.seed * 0x100000001B3ULL + stream) ^ requests[ri].id);
    return std::mt19937_64(s);
  }

  double sample_transfer(std::size_t ri, std::uint64_t stream) const {
    auto rng = request_rng(ri, stream);
    return config.transfer.sample(rng);
  }

  bool is_dep_done(std::uint64_t id) const {
    return id < item_done.size() && item_done[id];
  }

  std::uint64_t new_item_id() {
    item_done.push_back(0);
    return next_item++;
  }

  void record_allocation(double t) {
    const int g = cluster.gpus_placed();
    if (!log.allocation.empty() && log.allocation.back().gpus == g) return;
    if (!log.allocation.empty() && log.allocation.back().time_ms == t) {
      log.allocation.back().gpus = g;
      return;
    }
    log.allocation.push_back({t, g});
  }

  double integrate_gpu_ms(double a, double b) const {
    double total = 0.0;
    for (std::size_t i = 0; i < log.allocation.size(); ++i) {
      const double s = log.allocation[i].time_ms;
      const double e = i + 1 < log.allocation.size() ? log.allocation[i + 1].time_ms
                                                     : std::max(b, s);
      const double lo = std::max(a, s), hi = std::min(b, e);
      if (hi > lo) total += (hi - lo) * log.allocation[i].gpus;
    }
    return total;
  }

  // --------------------------------------------------------------- pools

  std::vector<InstanceLoad> pool(InstanceKind kind) const {
    std::vector<InstanceLoad> out;
    for (const auto& inst : cluster.instances) {
      if (inst.kind == kind && inst.accepts_work()) {
        out.push_back({inst.id, inst.pending_text_tokens, inst.pending_image_tokens});
      }
    }
    return out;
  }

  double aging_for(Modality m) const {
    return config.policies.aging_fraction * config.slo.ttft_slo_ms(m);
  }

  std::int64_t prefill_size(std::int64_t text, std::int64_t image) const {
    return profile.model.architecture == Architecture::DecOnly ? text + image : text;
  }

  void add_pending(Instance& inst, const WorkItem& item, int sign) {
    if (item.stage == StageKind::Prefill) inst.pending_text_tokens += sign * item.text_tokens;
    inst.pending_image_tokens += sign * item.image_tokens;
  }

  // ------------------------------------------------------------- arrival

  void on_arrival(std::size_t ri) {
    const Request& r = requests[ri];
    ++log.arrived;
    ++window_arrivals;
    const auto totals = request_totals(r);
    window_text_tokens += static_cast<double>(totals.text);
    window_image_tokens += static_cast<double>(totals.image);
    if (r.images.empty()) {
      dispatch_prefill(ri, now(), /*text_only=*/true);
    } else {
      route_images(ri);
    }
  }

  double now() const { return cluster.time_ms; }

  void route_images(std::size_t ri) {
    const Request& r = requests[ri];
    const Topology topo = config.policies.topology;
    if (is_monolithic(topo)) {
      const InstanceKind k = image_entry_kind(topo);
      auto loads = pool(k);
      auto target = route_text(loads, profile.model.architecture,
                               config.policies.router, rr_text);
      if (!target) {
        backlog_image.push_back(ri);
        return;
      }
      Instance& inst = cluster.instances[*target];
      ImageShard all;
      for (int i = 0; i < static_cast<int>(r.images.size()); ++i) {
        all.image_indices.push_back(i);
        all.tiles += r.images[i].tiles;
        all.image_tokens += r.images[i].image_tokens;
      }
      const std::uint64_t enc = enqueue_shard(ri, inst, all, 0);
      runtime[ri].shards_left = 1;
      // The prefill item waits in the same queue, ordered by arrival.
      WorkItem pf = make_prefill(ri, now());
      pf.deps.push_back(enc);
      log.requests[ri].prefill_enqueue_ms = now();
      log.requests[ri].prefill_instance = inst.id;
      add_pending(inst, pf, +1);
      inst.queue.push_back(std::move(pf));
      try_start_cpu(inst);
      return;
    }
    auto loads = pool(InstanceKind::Image);
    if (loads.empty()) {
      backlog_image.push_back(ri);
      return;
    }
    auto assignments = route_image(r, loads, config.policies.router,
                                   config.policies.max_fanout, rr_image);
    runtime[ri].shards_left = static_cast<int>(assignments.size());
    for (std::size_t s = 0; s < assignments.size(); ++s) {
      Instance& inst = cluster.instances[assignments[s].instance];
      enqueue_shard(ri, inst, assignments[s].shard, static_cast<int>(s));
      try_start_cpu(inst);
    }
  }

  std::uint64_t enqueue_shard(std::size_t ri, Instance& inst, const ImageShard& shard,
                              int index) {
    WorkItem item;
    item.id = new_item_id();
    item.request_id = requests[ri].id;
    item.stage = StageKind::Preprocess;
    item.tokens = shard.image_tokens;
    item.image_tokens = shard.image_tokens;
    item.tiles = shard.tiles;
    item.shard = index;
    item.enqueue_ms = now();
    item.order_ms = now();
    item.ready_ms = now();
    item.aging_threshold_ms = aging_for(Modality::ImageText);
    ShardRecord rec;
    rec.instance = inst.id;
    rec.images = static_cast<int>(shard.image_indices.size());
    rec.tiles = shard.tiles;
    auto& shards = log.requests[ri].shards;
    if (static_cast<int>(shards.size()) <= index) shards.resize(index + 1);
    shards[index] = rec;
    add_pending(inst, item, +1);
    const std::uint64_t id = item.id;
    inst.cpu_queue.push_back(std::move(item));
    return id;
  }

  WorkItem make_prefill(std::size_t ri, double ready) {
    const auto totals = request_totals(requests[ri]);
    WorkItem item;
    item.id = new_item_id();
    item.request_id = requests[ri].id;
    item.stage = StageKind::Prefill;
    item.text_tokens = totals.text;
    item.image_tokens = totals.image;
    item.tokens = prefill_size(totals.text, totals.image);
    item.enqueue_ms = now();
    item.order_ms = now();
    item.ready_ms = ready;
    item.aging_threshold_ms = aging_for(requests[ri].modality());
    return item;
  }

  // Routes a prefill once its image tokens (if any) are ready to be pulled.
  void dispatch_prefill(std::size_t ri, double ready, bool text_only) {
    auto loads = pool(prefill_kind(config.policies.topology));
    auto target = route_text(loads, profile.model.architecture,
                             config.policies.router, rr_text);
    if (!target) {
      backlog_prefill.push_back({ri, ready});
      return;
    }
    (void)text_only;
    Instance& inst = cluster.instances[*target];
    WorkItem item = make_prefill(ri, std::max(ready, now()));
    auto& rec = log.requests[ri];
    rec.prefill_enqueue_ms = now();
    rec.prefill_instance = inst.id;
    add_pending(inst, item, +1);
    const double at = item.ready_ms;
    inst.queue.push_back(std::move(item));
    if (at > now()) {
      push(EventType::ItemReady, at, requests[ri].id, inst.id);
    } else {
      try_start_gpu(inst);
    }
  }

  // ---------------------------------------------------------------- CPU

  void try_start_cpu(Instance& inst) {
    if (inst.cpu_busy || inst.cpu_queue.empty()) return;
    if (inst.state == InstanceState::Starting || inst.state == InstanceState::Stopped) return;
    WorkItem& item = inst.cpu_queue.front();
    const std::size_t ri = index_of(item.request_id);
    const double dur = preprocess_latency_ms(item.tiles, inst.cpu_cores, profile);
    log.requests[ri].shards[item.shard].preprocess_start_ms = now();
    note_delay(StageKind::Preprocess, now() - item.enqueue_ms);
    inst.cpu_busy = true;
    push(EventType::CpuDone, now() + dur, item.request_id, inst.id);
  }

  void on_cpu_done(Instance& inst) {
    WorkItem item = std::move(inst.cpu_queue.front());
    inst.cpu_queue.erase(inst.cpu_queue.begin());
    inst.cpu_busy = false;
    const std::size_t ri = index_of(item.request_id);
    log.requests[ri].shards[item.shard].preprocess_end_ms = now();
    item.stage = StageKind::Encode;
    item.enqueue_ms = now();
    item.ready_ms = now();
    inst.queue.push_back(std::move(item));
    try_start_cpu(inst);
    try_start_gpu(inst);
  }

  // ---------------------------------------------------------------- GPU

  void try_start_gpu(Instance& inst) {
    if (!inst.in_service.empty() || inst.queue.empty()) return;
    if (inst.state == InstanceState::Starting || inst.state == InstanceState::Stopped) return;
    auto batch = form_batch(inst, now(), config.policies.scheduler,
                            [this](std::uint64_t id) { return is_dep_done(id); });
    if (batch.empty()) return;
    std::vector<std::size_t> sorted = batch;
    std::sort(sorted.begin(), sorted.end());
    std::vector<WorkItem> picked;
    for (auto i : batch) picked.push_back(inst.queue[i]);
    for (auto it = sorted.rbegin(); it != sorted.rend(); ++it) {
      inst.queue.erase(inst.queue.begin() + static_cast<std::ptrdiff_t>(*it));
    }
    double service = 0.0;
    if (picked.front().stage == StageKind::Encode) {
      std::int64_t tiles = 0;
      for (const auto& item : picked) tiles += item.tiles;
      service = encode_latency_ms(tiles, inst.tp, profile);
    } else {
      for (const auto& item : picked) {
        service += prefill_latency_ms(item.text_tokens, item.image_tokens, inst.tp, profile);
      }
    }
    for (const auto& item : picked) {
      const std::size_t ri = index_of(item.request_id);
      if (item.stage == StageKind::Encode) {
        log.requests[ri].shards[item.shard].encode_start_ms = now();
        note_delay(StageKind::Encode, now() - item.enqueue_ms);
      } else {
        log.requests[ri].prefill_start_ms = now();
        note_delay(StageKind::Prefill, now() - std::max(item.enqueue_ms, item.ready_ms));
      }
    }
    inst.in_service = std::move(picked);
    inst.busy_until_ms = now() + service;
    push(EventType::GpuDone, inst.busy_until_ms, inst.in_service.front().request_id, inst.id);
  }

  void on_gpu_done(Instance& inst) {
    std::vector<WorkItem> items = std::move(inst.in_service);
    inst.in_service.clear();
    for (const auto& item : items) {
      item_done[item.id] = 1;
      add_pending(inst, item, -1);
    }
    std::vector<Instance*> touched;
    for (const auto& item : items) {
      const std::size_t ri = index_of(item.request_id);
      auto& rec = log.requests[ri];
      if (item.stage == StageKind::Encode) {
        rec.shards[item.shard].encode_end_ms = now();
        if (--runtime[ri].shards_left == 0) {
          rec.encode_end_ms = now();
          if (is_monolithic(config.policies.topology)) {
            rec.transfer_end_ms = now();
          } else {
            const double ms = sample_transfer(ri, 1);
            rec.transfer_ms = ms;
            rec.transfer_end_ms = now() + ms;
            dispatch_prefill(ri, now() + ms, false);
          }
        }
      } else {
        rec.prefill_end_ms = now();
        on_first_token(ri, inst);
      }
    }
    try_start_gpu(inst);
    maybe_stop(inst);
  }

  // ------------------------------------------------------------- decode

  void on_first_token(std::size_t ri, Instance& inst) {
    if (requests[ri].output_tokens <= 1) {
      complete(ri, now());
      return;
    }
    if (!is_pd(config.policies.topology)) {
      admit_decode(inst, ri);
      return;
    }
    const double kv = sample_transfer(ri, 2);
    log.requests[ri].kv_transfer_ms = kv;
    route_decode(ri, now() + kv);
  }

  void route_decode(std::size_t ri, double at) {
    const Instance* best = nullptr;
    std::vector<const Instance*> active;
    for (const auto& inst : cluster.instances) {
      if (inst.kind == InstanceKind::Decode && inst.accepts_work()) active.push_back(&inst);
    }
    if (active.empty()) {
      backlog_decode.push_back(ri);
      return;
    }
    if (config.policies.router == RouterKind::RoundRobin) {
      best = active[rr_decode % active.size()];
      rr_decode = (rr_decode + 1) % active.size();
    } else {
      auto load = [](const Instance* i) {
        return i->decoding.size() + i->decode_waiting.size() + static_cast<std::size_t>(i->inbound);
      };
      for (const auto* i : active) {
        if (!best || load(i) < load(best)) best = i;
      }
    }
    Instance& target = cluster.instances[best->id];
    ++target.inbound;
    log.requests[ri].decode_instance = target.id;
    push(EventType::DecodeAdmit, std::max(at, now()), requests[ri].id, target.id, ri);
  }

  void admit_decode(Instance& inst, std::size_t ri) {
    log.requests[ri].decode_instance = inst.id;
    inst.decode_waiting.push_back(ri);
    if (inst.decoding.empty()) {
      reconcile_decode(inst, now());
      return;
    }
    const double s = inst.decode_step_ms;
    double steps = std::ceil((now() - inst.decode_t0_ms) / s - 1e-9);
    if (steps < 0.0) steps = 0.0;
    const double boundary = inst.decode_t0_ms + s * steps;
    if (boundary <= now()) {
      reconcile_decode(inst, now());
    } else {
      push(EventType::DecodeStep, boundary, 0, inst.id, inst.decode_version);
    }
  }

  void reconcile_decode(Instance& inst, double t) {
    if (!inst.decoding.empty()) {
      const auto k = static_cast<std::int64_t>(
          std::llround((t - inst.decode_t0_ms) / inst.decode_step_ms));
      if (k > 0) {
        for (auto& m : inst.decoding) {
          const std::int64_t steps = std::min(k, m.remaining);
          if (steps <= 0) continue;
          add_tbt(log.requests[m.request], inst.decode_step_ms, steps);
          m.remaining -= steps;
        }
      }
      std::vector<DecodeMember> kept;
      for (auto& m : inst.decoding) {
        if (m.remaining <= 0) {
          complete(m.request, t);
        } else {
          kept.push_back(m);
        }
      }
      inst.decoding = std::move(kept);
    }
    inst.decode_t0_ms = t;
    while (static_cast<int>(inst.decoding.size()) < inst.decode_max_batch &&
           !inst.decode_waiting.empty()) {
      const std::size_t ri = inst.decode_waiting.front();
      inst.decode_waiting.erase(inst.decode_waiting.begin());
      DecodeMember m;
      m.request = ri;
      m.remaining = requests[ri].output_tokens - 1;
      log.requests[ri].decode_start_ms = t;
      inst.decoding.push_back(m);
    }
    ++inst.decode_version;
    if (inst.decoding.empty()) {
      inst.decode_step_ms = 0.0;
      maybe_stop(inst);
      return;
    }
    inst.decode_step_ms =
        tbt_latency_ms(static_cast<int>(inst.decoding.size()), inst.tp, profile);
    std::int64_t min_rem = inst.decoding.front().remaining;
    for (const auto& m : inst.decoding) min_rem = std::min(min_rem, m.remaining);
    push(EventType::DecodeStep, t + inst.decode_step_ms * static_cast<double>(min_rem), 0,
         inst.id, inst.decode_version);
  }

  static void add_tbt(RequestRecord& rec, double step, std::int64_t count) {
    if (!rec.tbt.empty() && rec.tbt.back().step_ms == step) {
      rec.tbt.back().count += count;
    } else {
      rec.tbt.push_back({step, count});
    }
  }

  void complete(std::size_t ri, double t) {
    auto& rec = log.requests[ri];
    rec.completion_ms = t;
    ++log.completed;
    window_completions.push_back(ri);
  }

  // ------------------------------------------------------------ scaling

  void maybe_stop(Instance& inst) {
    if (inst.state != InstanceState::Draining || !inst.idle()) return;
    stop(inst);
  }

  void stop(Instance& inst) {
    inst.state = InstanceState::Stopped;
    inst.stopped_ms = now();
    auto& server = cluster.servers[inst.server_id];
    for (int g : inst.gpus) server.gpu_used[g] = false;
    bool text = false;
    for (const auto& other : cluster.instances) {
      if (other.server_id == inst.server_id && other.state != InstanceState::Stopped &&
          other.kind != InstanceKind::Image) {
        text = true;
      }
    }
    server.hosts_text = text;
    record_allocation(now());
  }

  void on_instance_up(Instance& inst) {
    if (inst.state != InstanceState::Starting) return;
    inst.state = InstanceState::Active;
    inst.active_ms = now();
    flush_backlogs();
  }

  void flush_backlogs() {
    std::deque<std::size_t> images;
    images.swap(backlog_image);
    for (auto ri : images) route_images(ri);
    std::deque<PendingPrefill> prefills;
    prefills.swap(backlog_prefill);
    for (const auto& p : prefills) dispatch_prefill(p.request, p.ready_ms, false);
    std::deque<std::size_t> decodes;
    decodes.swap(backlog_decode);
    for (auto ri : decodes) route_decode(ri, now());
  }

  void apply_scaling(const ScalingDecision& decision) {
    for (const auto& [kind, target] : decision.targets) {
      const auto kinds = kinds_for(config.policies.topology);
      if (std::find(kinds.begin(), kinds.end(), kind) == kinds.end()) {
        throw ConfigError("scaling: " + std::string(to_string(kind)) +
                          " is not part of the topology");
      }
      if (target < 1) {
        throw ConfigError("scaling: cannot scale " + std::string(to_string(kind)) +
                          " instances to zero");
      }
    }
    for (const auto& [kind, target] : decision.targets) {
      std::vector<InstanceId> live;
      for (const auto& inst : cluster.instances) {
        if (inst.kind == kind && (inst.state == InstanceState::Starting ||
                                  inst.state == InstanceState::Active)) {
          live.push_back(inst.id);
        }
      }
      const int current = static_cast<int>(live.size());
      if (target > current) {
        auto tp_it = decision.tp.find(kind);
        const int tp = tp_it != decision.tp.end() ? tp_it->second : kind_tp.at(kind);
        check_tp(kind, tp);
        std::vector<PlacementRequest> reqs(target - current, PlacementRequest{kind, tp});
        auto placement = place(reqs, cluster.servers, config.policies.placement, spread_cursor);
        for (auto& placed : placement.placed) {
          Instance& inst = add_instance(placed, InstanceState::Starting, now());
          push(EventType::InstanceUp, inst.active_ms, 0, inst.id);
        }
        if (placement.partial) {
          window_clamped = true;
          window_notes.push_back("placement truncated: " +
                                 std::to_string(placement.unplaced.size()) + " " +
                                 std::string(to_string(kind)) + " unplaced");
        }
      } else if (target < current) {
        std::vector<InstanceId> order = live;
        std::sort(order.begin(), order.end(), [&](InstanceId a, InstanceId b) {
          const auto& ia = cluster.instances[a];
          const auto& ib = cluster.instances[b];
          const bool sa = ia.state == InstanceState::Starting;
          const bool sb = ib.state == InstanceState::Starting;
          if (sa != sb) return sa;
          const auto la = ia.pending_text_tokens + ia.pending_image_tokens +
                           static_cast<std::int64_t>(ia.decoding.size());
          const auto lb = ib.pending_text_tokens + ib.pending_image_tokens +
                           static_cast<std::int64_t>(ib.decoding.size());
          if (la != lb) return la < lb;
          return a > b;
        });
        for (int n = 0; n < current - target; ++n) {
          Instance& inst = cluster.instances[order[n]];
          if (inst.state == InstanceState::Starting) {
            stop(inst);
          } else {
            inst.state = InstanceState::Draining;
            maybe_stop(inst);
          }
        }
      }
    }
    record_allocation(now());
  }

  // ------------------------------------------------------------- windows

  void note_delay(StageKind stage, double ms) {
    auto& acc = window_delay[stage];
    acc.first += ms;
    ++acc.second;
  }

  bool meets_slo(const RequestRecord& rec) const {
    return rec.ttft_ms() <= config.slo.ttft_slo_ms(rec.modality) &&
           rec.tbt_p99_ms() <= config.slo.tbt_slo_ms();
  }

  void on_tick() {
    WindowRecord w;
    w.start_ms = window_start;
    w.end_ms = now();
    for (const auto& inst : cluster.instances) {
      if (inst.state != InstanceState::Stopped) ++w.instances[inst.kind];
    }
    w.gpus = cluster.gpus_placed();
    w.gpu_seconds = integrate_gpu_ms(w.start_ms, w.end_ms) / 1000.0;
    w.arrivals = window_arrivals;
    w.completions = window_completions.size();
    for (auto ri : window_completions) {
      if (meets_slo(log.requests[ri])) ++w.slo_met;
    }
    w.attainment_vacuous = w.completions == 0;
    w.attainment = w.completions == 0 ? 1.0
                                      : static_cast<double>(w.slo_met) /
                                            static_cast<double>(w.completions);
    const double secs = std::max(1e-9, (w.end_ms - w.start_ms) / 1000.0);
    w.image_token_rate = window_image_tokens / secs;
    w.text_token_rate = window_text_tokens / secs;
    for (const auto& [stage, acc] : window_delay) {
      if (acc.second > 0) w.mean_queue_delay_ms[stage] = acc.first / static_cast<double>(acc.second);
    }
    window_clamped = false;
    window_notes.clear();
    if (config.policies.autoscaler == AutoscalerKind::TokenAware &&
        now() < config.horizon_ms) {
      LoadWindow lw;
      lw.window_ms = w.end_ms - w.start_ms;
      lw.image_token_rate = w.image_token_rate;
      lw.text_token_rate = w.text_token_rate;
      lw.total_token_rate = w.image_token_rate + w.text_token_rate;
      lw.slo_attainment = w.attainment;
      lw.attainment_valid = !w.attainment_vacuous;
      lw.mean_queue_delay_ms = w.mean_queue_delay_ms;
      ClusterCapacity cap;
      cap.total_gpus = cluster.gpus_total();
      for (const auto& inst : cluster.instances) {
        if (inst.state == InstanceState::Starting || inst.state == InstanceState::Active) {
          ++cap.current[inst.kind];
        }
      }
      auto decision = autoscale(lw, profile, config.slo, cap, config.policies, kind_tp, memory);
      apply_scaling(decision);
      w.targets = decision.targets;
      w.clamped = decision.clamped || window_clamped;
      w.notes = decision.notes;
      for (auto& n : window_notes) w.notes.push_back(n);
    }
    log.windows.push_back(std::move(w));
    window_start = now();
    window_completions.clear();
    window_arrivals = 0;
    window_image_tokens = window_text_tokens = 0.0;
    window_delay.clear();
    ++window_index;
    const double next = std::min(config.horizon_ms,
                                 static_cast<double>(window_index + 1) * config.window_ms);
    if (now() < config.horizon_ms) push(EventType::Tick, next, 0, -1);
  }

  // ---------------------------------------------------------------- loop

  std::unordered_map<std::uint64_t, std::size_t> index;

  std::size_t index_of(std::uint64_t id) const { return index.at(id); }

  void load(const std::vector<Request>& reqs) {
    if (loaded) throw std::logic_error("Simulator::load called twice");
    loaded = true;
    double last = -1.0;
    for (const auto& r : reqs) {
      if (r.arrival_ms < last) throw std::invalid_argument("workload not sorted by arrival");
      last = r.arrival_ms;
      if (r.arrival_ms >= config.horizon_ms || r.arrival_ms < 0.0) continue;
      validate_request(r);
      if (index.count(r.id)) throw std::invalid_argument("duplicate request id");
      const std::size_t ri = requests.size();
      index[r.id] = ri;
      requests.push_back(r);
      RequestRecord rec;
      rec.id = r.id;
      rec.arrival_ms = r.arrival_ms;
      rec.modality = r.modality();
      rec.service_id = r.service_id;
      const auto totals = request_totals(r);
      rec.text_tokens = totals.text;
      rec.image_tokens = totals.image;
      rec.images = static_cast<int>(r.images.size());
      rec.tiles = r.total_tiles();
      rec.output_tokens = r.output_tokens;
      log.requests.push_back(std::move(rec));
      push(EventType::Arrival, r.arrival_ms, r.id, -1, ri);
    }
    runtime.resize(requests.size());
    push(EventType::Tick, std::min(config.window_ms, config.horizon_ms), 0, -1);
  }

  void dispatch(const Event& e) {
    cluster.time_ms = e.t;
    switch (e.type) {
      case EventType::Arrival: on_arrival(e.aux); break;
      case EventType::CpuDone: on_cpu_done(cluster.instances[e.instance]); break;
      case EventType::GpuDone: on_gpu_done(cluster.instances[e.instance]); break;
      case EventType::ItemReady: try_start_gpu(cluster.instances[e.instance]); break;
      case EventType::DecodeStep: {
        Instance& inst = cluster.instances[e.instance];
        if (e.aux == inst.decode_version) reconcile_decode(inst, e.t);
        break;
      }
      case EventType::DecodeAdmit: {
        Instance& inst = cluster.instances[e.instance];
        --inst.inbound;
        admit_decode(inst, e.aux);
        break;
      }
      case EventType::InstanceUp: on_instance_up(cluster.instances[e.instance]); break;
      case EventType::Tick: on_tick(); break;
    }
  }

  void run_until(double t) {
    if (!loaded) load({});
    while (!events.empty() && events.top().t <= t) {
      const Event e = events.top();
      events.pop();
      dispatch(e);
      ++log.events;
      if (config.check_invariants) check();
    }
    if (t > cluster.time_ms && t < std::numeric_limits<double>::infinity()) {
      cluster.time_ms = std::max(cluster.time_ms, std::min(t, next_event_time()));
    }
  }

  double next_event_time() const {
    return events.empty() ? std::numeric_limits<double>::infinity() : events.top().t;
  }

  MetricsLog finish() {
    if (finished) return log;
    const double end = config.horizon_ms + config.drain_ms;
    run_until(end);
    finished = true;
    log.in_flight = 0;
    for (const auto& rec : log.requests) {
      if (!rec.completed()) ++log.in_flight;
    }
    if (log.in_flight > 0 && events.empty()) {
      throw DeadlockError(diagnostic());
    }
    log.end_ms = cluster.time_ms;
    log.gpu_seconds = integrate_gpu_ms(0.0, config.horizon_ms) / 1000.0;
    return log;
  }

  std::string diagnostic() const {
    std::ostringstream os;
    os << "deadlock at t=" << now() << " ms: " << log.in_flight
       << " request(s) unfinished with no pending events;";
    os << " backlog image=" << backlog_image.size() << " prefill=" << backlog_prefill.size()
       << " decode=" << backlog_decode.size();
    for (const auto& inst : cluster.instances) {
      if (inst.state == InstanceState::Stopped) continue;
      os << "; instance " << inst.id << " " << to_string(inst.kind) << " "
         << to_string(inst.state) << " queue=" << inst.queue.size()
         << " cpu=" << inst.cpu_queue.size() << " decoding=" << inst.decoding.size()
         << " waiting=" << inst.decode_waiting.size();
    }
    return os.str();
  }

  // ----------------------------------------------------------- invariants

  void check() const {
    auto fail = [&](const std::string& what) {
      throw std::logic_error("invariant violated at t=" + std::to_string(now()) + ": " + what);
    };
    for (const auto& server : cluster.servers) {
      std::vector<int> owner(server.gpus_total, -1);
      int used = 0;
      for (const auto& inst : cluster.instances) {
        if (inst.state == InstanceState::Stopped || inst.server_id != server.server_id) continue;
        for (int g : inst.gpus) {
          if (g < 0 || g >= server.gpus_total) fail("GPU index out of range");
          if (owner[g] >= 0) fail("GPU double-booked on server " + std::to_string(server.server_id));
          owner[g] = inst.id;
          ++used;
          if (!server.gpu_used[g]) fail("placed GPU not marked used");
        }
      }
      if (used > server.gpus_total) fail("server over-allocated");
      if (used != server.gpus_total - server.gpus_free()) fail("server GPU bookkeeping mismatch");
    }
    if (cluster.gpus_placed() > cluster.gpus_total()) fail("cluster over-allocated");
    for (const auto& inst : cluster.instances) {
      std::int64_t text = 0, image = 0;
      auto add = [&](const WorkItem& item) {
        if (item.stage == StageKind::Prefill) text += item.text_tokens;
        image += item.image_tokens;
      };
      for (const auto& item : inst.cpu_queue) add(item);
      for (const auto& item : inst.queue) add(item);
      for (const auto& item : inst.in_service) add(item);
      if (text != inst.pending_text_tokens || image != inst.pending_image_tokens) {
        fail("pending counters drift on instance " + std::to_string(inst.id));
      }
      if (inst.state == InstanceState::Starting &&
          !(inst.queue.empty() && inst.cpu_queue.empty() && inst.decoding.empty())) {
        fail("starting instance holds work");
      }
      if (inst.state == InstanceState::Stopped && !inst.idle()) {
        fail("stopped instance holds work");
      }
      if ((inst.state == InstanceState::Active || inst.state == InstanceState::Draining) &&
          inst.in_service.empty() && !inst.queue.empty()) {
        auto runnable = form_batch(inst, now(), config.policies.scheduler,
                                   [this](std::uint64_t id) { return is_dep_done(id); });
        if (!runnable.empty()) fail("instance " + std::to_string(inst.id) + " idle with runnable work");
      }
      if (static_cast<int>(inst.decoding.size()) > std::max(1, inst.decode_max_batch)) {
        fail("decode batch above its limit");
      }
    }
  }
};

Simulator::Simulator(EngineConfig config, const LatencyProfile& profile)
    : impl_(std::make_unique<Impl>(std::move(config), profile)) {}
Simulator::~Simulator() = default;
void Simulator::load(const std::vector<Request>& requests) { impl_->load(requests); }
void Simulator::run_until(double t_ms) { impl_->run_until(t_ms); }
MetricsLog Simulator::finish() { return impl_->finish(); }
void Simulator::apply_scaling(const ScalingDecision& decision) { impl_->apply_scaling(decision); }
const ClusterState& Simulator::cluster() const { return impl_->cluster; }
const MetricsLog& Simulator::log() const { return impl_->log; }
double Simulator::now() const { return impl_->now(); }
void Simulator::check_invariants() const { impl_->check(); }

MetricsLog run(const EngineConfig& config, const std::vector<Request>& workload,
               const LatencyProfile& profile) {
  Simulator sim(config, profile);
  sim.load(workload);
  return sim.finish();
}

// ----------------------------------------------------------------- export

namespace {

std::string fmt_ms(double v) {
  if (v < 0.0) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_requests_csv(const MetricsLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "request_id,arrival,modality,service_id,text_tokens,image_tokens,images,tiles,"
         "output_tokens,ttft,tbt_p99,preprocess_start,preprocess_end,encode_start,"
         "encode_end,transfer_end,prefill_start,prefill_end,decode_start,completion,"
         "shards,prefill_instance,decode_instance\n";
  for (const auto& r : log.requests) {
    out << r.id << ',' << fmt_ms(r.arrival_ms) << ',' << to_string(r.modality) << ','
        << r.service_id << ',' << r.text_tokens << ',' << r.image_tokens << ',' << r.images
        << ',' << r.tiles << ',' << r.output_tokens << ','
        << (r.has_first_token() ? fmt_ms(r.ttft_ms()) : "") << ','
        << (r.completed() ? fmt_ms(r.tbt_p99_ms()) : "") << ','
        << fmt_ms(r.preprocess_start_ms()) << ',' << fmt_ms(r.preprocess_end_ms()) << ','
        << fmt_ms(r.encode_start_ms()) << ',' << fmt_ms(r.encode_end_ms) << ','
        << fmt_ms(r.transfer_end_ms) << ',' << fmt_ms(r.prefill_start_ms) << ','
        << fmt_ms(r.prefill_end_ms) << ',' << fmt_ms(r.decode_start_ms) << ','
        << fmt_ms(r.completion_ms) << ',' << r.shards.size() << ',' << r.prefill_instance
        << ',' << r.decode_instance << '\n';
  }
}

nlohmann::json windows_json(const MetricsLog& log) {
  auto arr = nlohmann::json::array();
  for (const auto& w : log.windows) {
    nlohmann::json j;
    j["start_ms"] = w.start_ms;
    j["end_ms"] = w.end_ms;
    nlohmann::json inst = nlohmann::json::object();
    for (const auto& [k, n] : w.instances) inst[std::string(to_string(k))] = n;
    j["instances"] = inst;
    j["gpus"] = w.gpus;
    j["gpu_seconds"] = w.gpu_seconds;
    j["arrivals"] = w.arrivals;
    j["completions"] = w.completions;
    j["slo_met"] = w.slo_met;
    j["slo_attainment"] = w.attainment;
    j["attainment_vacuous"] = w.attainment_vacuous;
    j["image_token_rate"] = w.image_token_rate;
    j["text_token_rate"] = w.text_token_rate;
    nlohmann::json delay = nlohmann::json::object();
    for (const auto& [s, d] : w.mean_queue_delay_ms) delay[std::string(to_string(s))] = d;
    j["mean_queue_delay_ms"] = delay;
    if (!w.targets.empty()) {
      nlohmann::json t = nlohmann::json::object();
      for (const auto& [k, n] : w.targets) t[std::string(to_string(k))] = n;
      j["targets"] = t;
    }
    j["clamped"] = w.clamped;
    j["notes"] = w.notes;
    arr.push_back(std::move(j));
  }
  return arr;
}

}  // namespace mmsim
