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

#include "mmsim/policies.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmsim {

namespace {

template <typename E, std::size_t N>
E parse_enum(std::string_view s, const E (&values)[N], const char* what) {
  for (E v : values) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

bool is_image_side(InstanceKind k) { return k == InstanceKind::Image; }

}  // namespace

std::string_view to_string(RouterKind k) {
  return k == RouterKind::RoundRobin ? "RoundRobin" : "LeastPendingModalityAware";
}
std::string_view to_string(SchedulerKind k) {
  return k == SchedulerKind::FIFO ? "FIFO" : "SLOPriority";
}
std::string_view to_string(AutoscalerKind k) {
  return k == AutoscalerKind::None ? "None" : "TokenAware";
}
std::string_view to_string(PlacementKind k) {
  return k == PlacementKind::Spread ? "Spread" : "ColocatePreferred";
}
std::string_view to_string(Topology t) {
  switch (t) {
    case Topology::Monolith: return "Monolith";
    case Topology::Decoupled: return "Decoupled";
    case Topology::DecoupledPD: return "DecoupledPD";
    case Topology::MonolithPD: return "MonolithPD";
  }
  return "?";
}
std::string_view to_string(InstanceKind k) {
  switch (k) {
    case InstanceKind::Image: return "Image";
    case InstanceKind::Text: return "Text";
    case InstanceKind::Prefill: return "Prefill";
    case InstanceKind::Decode: return "Decode";
    case InstanceKind::Monolith: return "Monolith";
    case InstanceKind::MonolithPrefill: return "MonolithPrefill";
  }
  return "?";
}

RouterKind parse_router(std::string_view s) {
  static constexpr RouterKind v[] = {RouterKind::RoundRobin,
                                     RouterKind::LeastPendingModalityAware};
  return parse_enum(s, v, "router");
}
SchedulerKind parse_scheduler(std::string_view s) {
  static constexpr SchedulerKind v[] = {SchedulerKind::FIFO,
                                        SchedulerKind::SLOPriority};
  return parse_enum(s, v, "scheduler");
}
AutoscalerKind parse_autoscaler(std::string_view s) {
  static constexpr AutoscalerKind v[] = {AutoscalerKind::None,
                                         AutoscalerKind::TokenAware};
  return parse_enum(s, v, "autoscaler");
}
PlacementKind parse_placement(std::string_view s) {
  static constexpr PlacementKind v[] = {PlacementKind::Spread,
                                        PlacementKind::ColocatePreferred};
  return parse_enum(s, v, "placement");
}
Topology parse_topology(std::string_view s) {
  static constexpr Topology v[] = {Topology::Monolith, Topology::Decoupled,
                                   Topology::DecoupledPD, Topology::MonolithPD};
  return parse_enum(s, v, "topology");
}
InstanceKind parse_instance_kind(std::string_view s) {
  static constexpr InstanceKind v[] = {
      InstanceKind::Image,   InstanceKind::Text,     InstanceKind::Prefill,
      InstanceKind::Decode,  InstanceKind::Monolith, InstanceKind::MonolithPrefill};
  return parse_enum(s, v, "instance kind");
}

bool is_monolithic(Topology t) {
  return t == Topology::Monolith || t == Topology::MonolithPD;
}
bool is_pd(Topology t) {
  return t == Topology::DecoupledPD || t == Topology::MonolithPD;
}

std::vector<InstanceKind> kinds_for(Topology t) {
  switch (t) {
    case Topology::Monolith: return {InstanceKind::Monolith};
    case Topology::Decoupled: return {InstanceKind::Text, InstanceKind::Image};
    case Topology::DecoupledPD:
      return {InstanceKind::Prefill, InstanceKind::Decode, InstanceKind::Image};
    case Topology::MonolithPD:
      return {InstanceKind::MonolithPrefill, InstanceKind::Decode};
  }
  return {};
}

InstanceKind image_entry_kind(Topology t) {
  switch (t) {
    case Topology::Monolith: return InstanceKind::Monolith;
    case Topology::MonolithPD: return InstanceKind::MonolithPrefill;
    default: return InstanceKind::Image;
  }
}

InstanceKind prefill_kind(Topology t) {
  switch (t) {
    case Topology::Monolith: return InstanceKind::Monolith;
    case Topology::Decoupled: return InstanceKind::Text;
    case Topology::DecoupledPD: return InstanceKind::Prefill;
    case Topology::MonolithPD: return InstanceKind::MonolithPrefill;
  }
  return InstanceKind::Text;
}

void PolicySet::validate() const {
  if (max_fanout < 1) throw ConfigError("policies.max_fanout must be >= 1");
  if (aging_fraction < 0.0) throw ConfigError("policies.aging_fraction must be >= 0");
  if (headroom_growth < 1.0 || headroom_decay <= 0.0 || headroom_decay > 1.0) {
    throw ConfigError("policies.headroom_growth must be >= 1 and headroom_decay in (0, 1]");
  }
  if (attainment_threshold < 0.0 || attainment_threshold > 1.0) {
    throw ConfigError("policies.attainment_threshold must be in [0, 1]");
  }
  if (topology == Topology::Monolith && router == RouterKind::LeastPendingModalityAware) {
    throw ConfigError("policies.router: Monolith colocates every stage, modality-aware routing "
                      "does not apply");
  }
}

// ---------------------------------------------------------------- routing

std::vector<ImageShard> encode_shard(const Request& request, int n_shards) {
  const int n_images = static_cast<int>(request.images.size());
  if (n_images == 0) return {};
  const int n = std::clamp(n_shards, 1, n_images);
  std::vector<int> order(n_images);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return request.images[a].tiles > request.images[b].tiles;
  });
  std::vector<ImageShard> shards(n);
  for (int idx : order) {
    auto target = std::min_element(
        shards.begin(), shards.end(),
        [](const ImageShard& a, const ImageShard& b) { return a.tiles < b.tiles; });
    target->image_indices.push_back(idx);
    target->tiles += request.images[idx].tiles;
    target->image_tokens += request.images[idx].image_tokens;
  }
  shards.erase(std::remove_if(shards.begin(), shards.end(),
                              [](const ImageShard& s) { return s.tiles == 0; }),
               shards.end());
  for (auto& s : shards) std::sort(s.image_indices.begin(), s.image_indices.end());
  std::stable_sort(shards.begin(), shards.end(),
                   [](const ImageShard& a, const ImageShard& b) {
                     return a.tiles > b.tiles;
                   });
  return shards;
}

std::vector<ShardAssignment> route_image(const Request& request,
                                         const std::vector<InstanceLoad>& pool,
                                         RouterKind router, int max_fanout,
                                         std::size_t& rr_cursor) {
  if (pool.empty() || request.images.empty()) return {};
  const int k = std::min({static_cast<int>(request.images.size()),
                          static_cast<int>(pool.size()), std::max(max_fanout, 1)});
  const auto shards = encode_shard(request, k);
  std::vector<ShardAssignment> out;
  if (router == RouterKind::RoundRobin) {
    for (std::size_t j = 0; j < shards.size(); ++j) {
      out.push_back({pool[(rr_cursor + j) % pool.size()].id, shards[j]});
    }
    rr_cursor = (rr_cursor + shards.size()) % pool.size();
    return out;
  }
  std::vector<InstanceLoad> sorted = pool;
  std::sort(sorted.begin(), sorted.end(),
            [](const InstanceLoad& a, const InstanceLoad& b) {
              if (a.pending_image_tokens != b.pending_image_tokens) {
                return a.pending_image_tokens < b.pending_image_tokens;
              }
              return a.id < b.id;
            });
  for (std::size_t j = 0; j < shards.size(); ++j) {
    out.push_back({sorted[j].id, shards[j]});
  }
  return out;
}

std::optional<InstanceId> route_text(const std::vector<InstanceLoad>& pool,
                                     Architecture architecture,
                                     RouterKind router, std::size_t& rr_cursor) {
  if (pool.empty()) return std::nullopt;
  if (router == RouterKind::RoundRobin) {
    const InstanceId id = pool[rr_cursor % pool.size()].id;
    rr_cursor = (rr_cursor + 1) % pool.size();
    return id;
  }
  auto key = [&](const InstanceLoad& l) {
    return architecture == Architecture::DecOnly
               ? l.pending_text_tokens + l.pending_image_tokens
               : l.pending_text_tokens;
  };
  const InstanceLoad* best = &pool.front();
  for (const auto& l : pool) {
    if (key(l) < key(*best) || (key(l) == key(*best) && l.id < best->id)) {
      best = &l;
    }
  }
  return best->id;
}

// ------------------------------------------------------------- scheduling

int schedule_next(const std::vector<QueuedItemView>& items, double now_ms,
                  SchedulerKind scheduler) {
  if (items.empty()) return -1;
  auto older = [&](int a, int b) {
    if (items[a].enqueue_ms != items[b].enqueue_ms) {
      return items[a].enqueue_ms < items[b].enqueue_ms;
    }
    return items[a].tie_break < items[b].tie_break;
  };
  int best = -1;
  if (scheduler == SchedulerKind::SLOPriority) {
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      if (now_ms - items[i].enqueue_ms > items[i].aging_threshold_ms &&
          (best < 0 || older(i, best))) {
        best = i;
      }
    }
    if (best >= 0) return best;
    for (int i = 0; i < static_cast<int>(items.size()); ++i) {
      if (best < 0 || items[i].tokens < items[best].tokens ||
          (items[i].tokens == items[best].tokens && older(i, best))) {
        best = i;
      }
    }
    return best;
  }
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    if (best < 0 || older(i, best)) best = i;
  }
  return best;
}

// ------------------------------------------------------------ autoscaling

int ScalingDecision::gpus() const {
  int g = 0;
  for (const auto& [kind, n] : targets) {
    auto it = tp.find(kind);
    g += n * (it == tp.end() ? 1 : it->second);
  }
  return g;
}

StageBudgets stage_budgets(const LatencyProfile& profile, const SLOSpec& slo) {
  const auto shares = predicted_breakdown(profile);
  StageBudgets b;
  b.encode_ms = slo.ttft_slo_ms(Modality::ImageText) *
                (shares.at(StageKind::Encode) + shares.at(StageKind::Preprocess));
  b.prefill_ms = std::min(slo.ttft_slo_ms(Modality::TextOnly),
                          slo.ttft_slo_ms(Modality::ImageText) *
                              shares.at(StageKind::Prefill));
  if (!(b.prefill_ms > 0.0)) {
    b.prefill_ms = slo.ttft_slo_ms(Modality::ImageText) * shares.at(StageKind::Prefill);
  }
  return b;
}

int replicas_for(double load, double capacity) {
  if (!(load > 0.0)) return 1;
  if (!(capacity > 0.0)) return 1;
  // Guard against representation noise pushing an exact ratio over an integer.
  const double ratio = load / capacity;
  const double r = std::ceil(ratio - 1e-9);
  return std::max(1, static_cast<int>(r));
}

ScalingDecision autoscale(const LoadWindow& window, const LatencyProfile& profile,
                          const SLOSpec& slo, const ClusterCapacity& cluster,
                          const PolicySet& policies,
                          const std::map<InstanceKind, int>& tp,
                          AutoscaleMemory& memory) {
  const StageBudgets budgets = stage_budgets(profile, slo);
  const bool dec_only = profile.model.architecture == Architecture::DecOnly;
  const double prefill_load =
      dec_only ? window.total_token_rate : window.text_token_rate;
  auto tp_of = [&](InstanceKind k) {
    auto it = tp.find(k);
    return it == tp.end() ? 1 : it->second;
  };
  auto capacity = [&](StageKind stage, InstanceKind k) {
    const double budget =
        stage == StageKind::Encode ? budgets.encode_ms : budgets.prefill_ms;
    return max_capacity(stage, tp_of(k), budget, profile).tokens_per_sec;
  };

  const Topology topo = policies.topology;
  const bool missed = window.attainment_valid &&
                      window.slo_attainment < policies.attainment_threshold;
  InstanceKind grow = prefill_kind(topo);
  if (missed && !is_monolithic(topo)) {
    auto delay = [&](StageKind s) {
      auto it = window.mean_queue_delay_ms.find(s);
      return it == window.mean_queue_delay_ms.end() ? 0.0 : it->second;
    };
    if (delay(StageKind::Encode) + delay(StageKind::Preprocess) >
        delay(StageKind::Prefill)) {
      grow = InstanceKind::Image;
    }
  }
  auto headroom = [&](InstanceKind k) {
    double& h = memory.headroom.try_emplace(k, 1.0).first->second;
    h = missed && k == grow ? h * policies.headroom_growth
                            : std::max(1.0, h * policies.headroom_decay);
    return h;
  };

  ScalingDecision d;
  d.tp = tp;
  std::map<InstanceKind, double> utilization;  // in replicas
  if (is_monolithic(topo)) {
    const InstanceKind k = prefill_kind(topo);
    double need = 0.0;
    const double mc_enc = capacity(StageKind::Encode, k);
    const double mc_pf = capacity(StageKind::Prefill, k);
    if (mc_enc > 0.0) need += window.image_token_rate / mc_enc;
    if (mc_pf > 0.0) need += prefill_load / mc_pf;
    need *= headroom(k);
    utilization[k] = need;
    d.targets[k] = replicas_for(need, 1.0);
  } else {
    const InstanceKind tk = prefill_kind(topo);
    const double mc_enc = capacity(StageKind::Encode, InstanceKind::Image);
    const double mc_pf = capacity(StageKind::Prefill, tk);
    const double image_load = window.image_token_rate * headroom(InstanceKind::Image);
    const double text_load = prefill_load * headroom(tk);
    utilization[InstanceKind::Image] = mc_enc > 0.0 ? image_load / mc_enc : 0.0;
    utilization[tk] = mc_pf > 0.0 ? text_load / mc_pf : 0.0;
    d.targets[InstanceKind::Image] = replicas_for(image_load, mc_enc);
    d.targets[tk] = replicas_for(text_load, mc_pf);
  }
  if (is_pd(topo)) {
    auto it = cluster.current.find(InstanceKind::Decode);
    d.targets[InstanceKind::Decode] =
        std::max(1, it == cluster.current.end() ? 1 : it->second);
  }

  // Attainment-triggered scale-up on the stage with the largest queueing.
  if (missed) {
    const int cur = cluster.current.count(grow) ? cluster.current.at(grow) : 0;
    d.targets[grow] = std::max(d.targets[grow], cur) + 1;
    d.notes.push_back("attainment below threshold: +1 " +
                      std::string(to_string(grow)));
  }

  // Scale-down hysteresis.
  for (auto& [kind, target] : d.targets) {
    auto it = cluster.current.find(kind);
    const int cur = it == cluster.current.end() ? 0 : it->second;
    if (target >= cur || kind == InstanceKind::Decode) {
      memory.low_windows[kind] = 0;
      continue;
    }
    const double util = cur > 0 ? utilization[kind] / cur : 0.0;
    if (util < policies.scale_down_utilization) {
      if (++memory.low_windows[kind] >= policies.scale_down_windows) {
        memory.low_windows[kind] = 0;
        continue;  // shrink to target
      }
    } else {
      memory.low_windows[kind] = 0;
    }
    target = cur;
  }

  // Clamp to the GPU inventory, shrinking the largest pool first.
  while (d.gpus() > cluster.total_gpus) {
    InstanceKind victim{};
    int best = 0;
    for (const auto& [kind, n] : d.targets) {
      if (n > 1 && n * tp_of(kind) > best) {
        best = n * tp_of(kind);
        victim = kind;
      }
    }
    if (best == 0) break;
    --d.targets[victim];
    d.clamped = true;
  }
  if (d.clamped) d.notes.push_back("decision clamped to GPU inventory");
  return d;
}

ScalingDecision initial_sizing(const WorkloadSummary& summary,
                               const LatencyProfile& profile, int image_tp,
                               int text_tp,
                               const ScalingDecision& overprovision) {
  if (summary.empty || summary.requests == 0) {
    ScalingDecision d = overprovision;
    d.notes.push_back("no history: overprovisioned");
    return d;
  }
  const double encode_s =
      reference_job(StageKind::Encode, image_tp, profile).service_ms / 1000.0;
  const int n_i = std::max(
      1, static_cast<int>(std::ceil(summary.median_image_qps * encode_s - 1e-9)));
  const double per_req = std::max(1.0, summary.median_images_per_request);
  const int n_t = std::max(1, static_cast<int>(std::ceil(n_i / per_req - 1e-9)));
  ScalingDecision d;
  d.targets[InstanceKind::Image] = n_i;
  d.targets[InstanceKind::Text] = n_t;
  d.tp[InstanceKind::Image] = image_tp;
  d.tp[InstanceKind::Text] = text_tp;
  return d;
}

ShardingChoice select_sharding(InstanceKind kind, const LatencyProfile& profile,
                               double stage_budget_ms) {
  const StageKind stage = is_image_side(kind) ? StageKind::Encode : StageKind::Prefill;
  const auto& allowed = is_image_side(kind) ? profile.model.supported_tp_encoder
                                            : profile.model.supported_tp_text;
  std::vector<int> tps;
  for (int tp : profile.profiled_tps(stage)) {
    if (std::find(allowed.begin(), allowed.end(), tp) != allowed.end()) {
      tps.push_back(tp);
    }
  }
  if (tps.empty()) throw ConfigError("no supported TP profiled for " + std::string(to_string(kind)));
  std::sort(tps.begin(), tps.end());
  ShardingChoice best{tps.back(), false};
  double best_score = -1.0;
  for (int tp : tps) {
    if (reference_job(stage, tp, profile).service_ms > stage_budget_ms) continue;
    const double score =
        max_capacity(stage, tp, stage_budget_ms, profile).tokens_per_sec / tp;
    if (score > best_score) {
      best_score = score;
      best = {tp, true};
    }
  }
  return best;
}

int select_max_batch(InstanceKind kind, int tp, const LatencyProfile& profile,
                     const SLOSpec& slo) {
  if (kind != InstanceKind::Decode && kind != InstanceKind::Text &&
      kind != InstanceKind::Monolith) {
    return 1;
  }
  const double limit = slo.tbt_slo_ms();
  int best = 1;
  for (int b = 1; b <= profile.decode_max_batch(); ++b) {
    if (tbt_latency_ms(b, tp, profile) <= limit) best = b;
  }
  return best;
}

// -------------------------------------------------------------- placement

int ServerState::gpus_free() const {
  return static_cast<int>(std::count(gpu_used.begin(), gpu_used.end(), false));
}

namespace {

bool take_gpus(ServerState& s, int tp, std::vector<int>& out) {
  if (s.gpus_free() < tp) return false;
  out.clear();
  for (int g = 0; g < s.gpus_total && static_cast<int>(out.size()) < tp; ++g) {
    if (!s.gpu_used[g]) out.push_back(g);
  }
  for (int g : out) s.gpu_used[g] = true;
  return true;
}

}  // namespace

Placement place(const std::vector<PlacementRequest>& requests,
                std::vector<ServerState>& servers, PlacementKind kind,
                std::size_t& spread_cursor) {
  Placement out;
  auto put = [&](const PlacementRequest& r, ServerState& s) {
    PlacedInstance p;
    p.request = r;
    p.server_id = s.server_id;
    if (!take_gpus(s, r.tp, p.gpus)) return false;
    if (!is_image_side(r.kind)) s.hosts_text = true;
    out.placed.push_back(std::move(p));
    return true;
  };

  if (kind == PlacementKind::Spread) {
    for (const auto& r : requests) {
      bool ok = false;
      for (std::size_t k = 0; k < servers.size() && !ok; ++k) {
        auto& s = servers[(spread_cursor + k) % servers.size()];
        if (put(r, s)) {
          ok = true;
          spread_cursor = (spread_cursor + k + 1) % servers.size();
        }
      }
      if (!ok) out.unplaced.push_back(r);
    }
    out.partial = !out.unplaced.empty();
    return out;
  }

  std::vector<PlacementRequest> text_side, image_side;
  for (const auto& r : requests) {
    (is_image_side(r.kind) ? image_side : text_side).push_back(r);
  }
  auto by_tp = [](const PlacementRequest& a, const PlacementRequest& b) {
    return a.tp > b.tp;
  };
  std::stable_sort(text_side.begin(), text_side.end(), by_tp);
  std::stable_sort(image_side.begin(), image_side.end(), by_tp);

  for (const auto& r : text_side) {
    bool ok = false;
    for (auto& s : servers) {
      if (!s.hosts_text && s.gpus_free() >= r.tp) {
        ok = put(r, s);
        break;
      }
    }
    for (auto it = servers.begin(); !ok && it != servers.end(); ++it) {
      ok = put(r, *it);
    }
    if (!ok) out.unplaced.push_back(r);
  }
  for (const auto& r : image_side) {
    bool ok = false;
    for (auto& s : servers) {
      if (s.hosts_text && put(r, s)) {
        ok = true;
        break;
      }
    }
    for (auto it = servers.begin(); !ok && it != servers.end(); ++it) {
      ok = put(r, *it);
    }
    if (!ok) out.unplaced.push_back(r);
  }
  out.partial = !out.unplaced.empty();
  return out;
}

}  // namespace mmsim
