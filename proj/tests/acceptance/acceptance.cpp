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

// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/engine.hpp"
#include "mmsim/experiment.hpp"
#include "mmsim/metrics.hpp"
#include "mmsim/policies.hpp"
#include "mmsim/profiles.hpp"
#include "mmsim/workload.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace mmsim;

namespace {

constexpr const char* kLlama = "Llama3.2-11B";
constexpr const char* kInternVL = "InternVL-26B";

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

fs::path scratch_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / ("mmsim_acceptance_" + std::to_string(::getpid()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// ------------------------------------------------------------ experiment setup

json instances(std::initializer_list<std::tuple<const char*, int, int>> list) {
  json a = json::array();
  for (const auto& [kind, tp, count] : list) a.push_back({{"kind", kind}, {"tp", tp}, {"count", count}});
  return a;
}

json monolith_layout() { return instances({{"Monolith", 4, 8}}); }

// Decoupled layouts on 32 GPUs, one per preset.
json decoupled_layout(const std::string& model) {
  if (model == kLlama) return instances({{"Text", 4, 5}, {"Image", 1, 12}});
  return instances({{"Text", 4, 6}, {"Image", 4, 2}});
}

json generator(double rate, double image_fraction, bool bursty, double horizon_ms) {
  json g = {{"base_rate", rate},
            {"image_request_fraction", image_fraction},
            {"text_len_min", 200},
            {"image_text_len_min", 100},
            {"images_per_request", {0.7, 0.2, 0.1}}};
  if (bursty) {
    json eps = json::array();
    for (double s = 120000.0; s < horizon_ms; s += 300000.0) {
      eps.push_back({{"start_ms", s}, {"duration_ms", 60000.0}, {"rate_multiplier", 2.0}});
    }
    g["burst_episodes"] = eps;
  }
  return g;
}

struct Variant {
  const char* topology;
  const char* router;
  const char* scheduler;
};
const Variant kMonolith{"Monolith", "RoundRobin", "FIFO"};
const Variant kDecoup{"Decoupled", "RoundRobin", "FIFO"};
const Variant kSched{"Decoupled", "RoundRobin", "SLOPriority"};
const Variant kFull{"Decoupled", "LeastPendingModalityAware", "SLOPriority"};

json experiment(const std::string& model, const Variant& v, const json& inst, const json& workload,
                double horizon_ms = 1800000.0) {
  return {{"model", model},
          {"topology", v.topology},
          {"policies", {{"router", v.router}, {"scheduler", v.scheduler}}},
          {"cluster", {{"servers", 4}, {"gpus_per_server", 8}, {"cpu_cores_per_server", 96}}},
          {"instances", inst},
          {"workload", workload},
          {"horizon_ms", horizon_ms},
          {"seeds", {1, 2, 3}},
          {"capacity", {{"seeds", {1, 2, 3}}}}};
}

ExperimentConfig parse(const json& j) { return parse_experiment(j, scratch_dir()); }

struct Stat {
  double mean = 0.0;
  double p99 = 0.0;
  double attainment = 0.0;
  double gpu_seconds = 0.0;
};

// Averages of the per-seed TTFT mean and P99.
Stat measure(const ExperimentConfig& c) {
  const auto runs = run_seeds(c, c.seeds, c.load_scale);
  Stat s;
  for (const auto& r : runs) {
    s.mean += r.latency.ttft.at("all").mean;
    s.p99 += r.latency.ttft.at("all").p99;
    s.attainment += r.attainment;
    s.gpu_seconds += r.cost.gpu_seconds;
  }
  const auto n = static_cast<double>(runs.size());
  s.mean /= n;
  s.p99 /= n;
  s.attainment /= n;
  s.gpu_seconds /= n;
  return s;
}

double gain(double base, double improved) { return 1.0 - improved / base; }

// Single-request simulation on one monolithic instance.
RequestRecord isolated(const LatencyProfile& profile, Request r, int tp) {
  EngineConfig e;
  e.cluster = {1, 8, 96};
  e.instances = {{InstanceKind::Monolith, tp, 1, 0}};
  e.policies.topology = Topology::Monolith;
  e.policies.router = RouterKind::RoundRobin;
  e.policies.scheduler = SchedulerKind::FIFO;
  e.slo = derive_slo(profile, tp, 96 * tp / 8, 5.0);
  e.horizon_ms = 60000.0;
  r.id = 0;
  r.arrival_ms = 0.0;
  return run(e, {r}, profile).requests.at(0);
}

// ------------------------------------------------------------------ criteria

Outcome calibration_fidelity() {
  const std::vector<std::pair<std::string, double>> targets = {
      {"Llama3.2-11B", 0.79}, {"Llama3.2-90B", 0.65}, {"InternVL-26B", 0.25}, {"NVLM-D-72B", 0.54}};
  Outcome o{true, ""};
  const fs::path out = scratch_dir() / "calibrate";
  for (const auto& [name, share] : targets) {
    std::ostringstream msg, err;
    if (cmd_calibrate("", name, out, true, msg, err) != 0) {
      return {false, name + ": calibrate failed: " + err.str()};
    }
    const LatencyProfile p = load_profile(out / "profiles" / (name + ".json"));
    const auto ref = p.reference();
    const RequestRecord rec = isolated(p, p.reference_request(true), ref.tp);
    const double got = (rec.encode_end_ms - rec.encode_start_ms()) / rec.ttft_ms();
    const bool ok = std::abs(got - share) <= 0.02;
    o.pass = o.pass && ok;
    o.detail += name + " " + fmt("%.3f", got) + " ";
  }
  return o;
}

Outcome mixed_modality_curve() {
  const LatencyProfile p = calibrate(preset_targets(kLlama), model_preset(kLlama));
  const auto& t = p.targets;
  const std::int64_t per_image = image_tokens(t.mixed_image_px, t.mixed_image_px, p.model);
  const int steps = static_cast<int>(t.mixed_total_tokens / per_image);
  std::vector<double> ttft, cross;
  for (int k = 0; k <= steps; ++k) {
    Request r;
    r.text_tokens = t.mixed_total_tokens - k * per_image;
    for (int i = 0; i < k; ++i) r.images.push_back(make_image(t.mixed_image_px, t.mixed_image_px, p.model));
    ttft.push_back(isolated(p, r, p.reference().tp).ttft_ms());
    cross.push_back(cross_attention_ms(r.text_tokens, k * per_image, p.reference().tp, p));
  }
  bool monotone = true;
  for (std::size_t i = 1; i < ttft.size(); ++i) monotone = monotone && ttft[i] > ttft[i - 1];
  const double ratio = ttft.back() / ttft.front();
  const auto peak = std::max_element(cross.begin(), cross.end()) - cross.begin();
  const bool centred = std::abs(static_cast<double>(peak) - steps / 2.0) <= 1.0;
  return {monotone && std::abs(ratio - 1.5) <= 0.15 && centred,
          std::string("monotone=") + (monotone ? "yes" : "no") + " ratio=" + fmt("%.3f", ratio) +
              " cross_peak=" + fmt("%.0f%%", 100.0 * static_cast<double>(peak) / steps)};
}

// High load: rates at which the monolith's overall SLO attainment falls to
// about 0.94 on the bursty workload.
double high_load(const std::string& model) { return model == kLlama ? 11.0 : 7.0; }

Outcome static_gain() {
  Outcome o{true, ""};
  double mean_gain[2] = {0, 0};
  int i = 0;
  for (const std::string model : {kLlama, kInternVL}) {
    const json w = {{"generator", generator(high_load(model), 0.3, true, 1800000.0)}};
    const Stat m = measure(parse(experiment(model, kMonolith, monolith_layout(), w)));
    const Stat f = measure(parse(experiment(model, kFull, decoupled_layout(model), w)));
    const double gm = gain(m.mean, f.mean), gp = gain(m.p99, f.p99);
    mean_gain[i++] = gm;
    o.pass = o.pass && gm >= 0.20 && gp >= 0.30;
    o.detail += model + " mean " + fmt("%.1f%%", 100 * gm) + " p99 " + fmt("%.1f%%", 100 * gp) + "; ";
  }
  o.pass = o.pass && mean_gain[1] > mean_gain[0];
  o.detail += std::string("DecOnly>CroAttn=") + (mean_gain[1] > mean_gain[0] ? "yes" : "no");
  return o;
}

Outcome throughput_gain() {
  Outcome o{true, ""};
  double ratio[2] = {0, 0};
  int i = 0;
  for (const std::string model : {kLlama, kInternVL}) {
    const json w = {{"generator", generator(4.0, 0.5, false, 1800000.0)}};
    const auto m = run_capacity(parse(experiment(model, kMonolith, monolith_layout(), w)));
    const auto f = run_capacity(parse(experiment(model, kFull, decoupled_layout(model), w)));
    const double r = m.infeasible || m.rate <= 0.0 ? 0.0 : f.rate / m.rate;
    ratio[i++] = r;
    o.pass = o.pass && r >= 2.0 && r <= 7.0;
    o.detail += model + " " + fmt("%.2f", f.rate) + "/" + fmt("%.2f", m.rate) + " req/s = " +
                fmt("%.2fx", r) + "; ";
  }
  o.pass = o.pass && ratio[1] > ratio[0];
  o.detail += std::string("InternVL>Llama=") + (ratio[1] > ratio[0] ? "yes" : "no");
  return o;
}

Outcome ablation_ordering() {
  const std::string model = kInternVL;
  const json w = {{"generator", generator(high_load(model), 0.3, true, 1800000.0)}};
  const double mono = measure(parse(experiment(model, kMonolith, monolith_layout(), w))).p99;
  const double dec = measure(parse(experiment(model, kDecoup, decoupled_layout(model), w))).p99;
  const double sched = measure(parse(experiment(model, kSched, decoupled_layout(model), w))).p99;
  const double full = measure(parse(experiment(model, kFull, decoupled_layout(model), w))).p99;
  const bool ordered = mono > dec && dec > sched && sched > full;
  const double gs = gain(dec, sched), gr = gain(sched, full);
  return {ordered && gs >= 0.10 && gr >= 0.10,
          model + " p99 ms mono " + fmt("%.0f", mono) + " decoup " + fmt("%.0f", dec) + " +sched " +
              fmt("%.0f", sched) + " +routing " + fmt("%.0f", full) + "; sched " +
              fmt("%.1f%%", 100 * gs) + " routing " + fmt("%.1f%%", 100 * gr)};
}

// One day: hourly diurnal multipliers plus short recurring image bursts.
std::vector<Request> day_trace(const ModelSpec& model) {
  GeneratorConfig g;
  g.base_rate = 1.4;
  g.text_len_min = 200;
  g.image_text_len_min = 100;
  g.images_per_request = {0.7, 0.2, 0.1};
  g.seed = 7;
  const double hour = 3600000.0;
  for (int h = 0; h < 24; ++h) {
    const double m = 0.3 + 1.7 * 0.5 * (1.0 - std::cos(2.0 * M_PI * (h - 3) / 24.0));
    g.burst_episodes.push_back({h * hour, hour, m, 1.0, -1.0});
  }
  for (int k = 0; k < 24 * 12; k += 7) {
    g.burst_episodes.push_back({k * 300000.0 + 100000.0, 90000.0, 1.6, 2.0, -1.0});
  }
  return generate(g, 24 * hour, model);
}

Outcome autoscaling_cost() {
  const fs::path trace = scratch_dir() / "day.csv";
  write_trace(trace, day_trace(model_preset(kLlama)));
  Outcome o{true, ""};
  double saving[2] = {0, 0};
  int i = 0;
  for (const std::string model : {kLlama, kInternVL}) {
    auto cfg = [&](const Variant& v, const json& inst) {
      json j = experiment(model, v, inst, {{"trace", trace.string()}}, 86400000.0);
      j["policies"]["autoscaler"] = "TokenAware";
      j["seeds"] = {1};
      return parse(j);
    };
    const Stat m = measure(cfg(kMonolith, monolith_layout()));
    const Stat f = measure(cfg(kFull, decoupled_layout(model)));
    const double s = gain(m.gpu_seconds, f.gpu_seconds);
    saving[i++] = s;
    o.pass = o.pass && s >= 0.15 && m.attainment >= 0.99 && f.attainment >= 0.99;
    o.detail += model + " saves " + fmt("%.1f%%", 100 * s) + " (attainment " +
                fmt("%.4f", m.attainment) + "/" + fmt("%.4f", f.attainment) + "); ";
  }
  o.pass = o.pass && saving[0] > saving[1];
  o.detail += std::string("CroAttn>DecOnly=") + (saving[0] > saving[1] ? "yes" : "no");
  return o;
}

Outcome pd_composability() {
  const std::string model = kInternVL;
  const json w = {{"generator", generator(4.0, 0.5, false, 1800000.0)}};
  const Variant pd_mono{"MonolithPD", "RoundRobin", "FIFO"};
  const Variant pd_full{"DecoupledPD", "LeastPendingModalityAware", "SLOPriority"};
  const json mono_inst = instances({{"MonolithPrefill", 4, 7}, {"Decode", 4, 1}});
  const json full_inst = instances({{"Image", 4, 2}, {"Prefill", 4, 5}, {"Decode", 4, 1}});
  ExperimentConfig full = parse(experiment(model, pd_full, full_inst, w));
  const auto cap = run_capacity(full);
  if (cap.infeasible) return {false, "DecoupledPD infeasible at every probed load"};
  ExperimentConfig mono = parse(experiment(model, pd_mono, mono_inst, w));
  full.load_scale = mono.load_scale = cap.load_scale;
  const Stat m = measure(mono), f = measure(full);
  const double ratio = m.mean / f.mean;
  return {ratio >= 2.0, "at " + fmt("%.2f", cap.rate) + " req/s mean TTFT " + fmt("%.0f", m.mean) +
                            " vs " + fmt("%.0f", f.mean) + " ms = " + fmt("%.2fx", ratio)};
}

Outcome transfer_sensitivity() {
  const std::string model = kInternVL;
  const json w = {{"generator", generator(high_load(model), 0.3, true, 1800000.0)}};
  const double mono = measure(parse(experiment(model, kMonolith, monolith_layout(), w))).mean;
  json rdma = experiment(model, kFull, decoupled_layout(model), w);
  json tcp = rdma;
  tcp["transfer"] = {{"medium", "TCP"}};
  const double g_rdma = gain(mono, measure(parse(rdma)).mean);
  const double g_tcp = gain(mono, measure(parse(tcp)).mean);
  return {g_tcp < g_rdma && g_tcp >= 0.25,
          "mean TTFT gain RDMA " + fmt("%.1f%%", 100 * g_rdma) + " TCP " + fmt("%.1f%%", 100 * g_tcp)};
}

// ------------------------------------------------------------ property suites

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Autoscaled decoupled run with bursts; invariants checked inside the engine.
ExperimentConfig scaling_config(const std::string& model) {
  json j = experiment(model, kFull, decoupled_layout(model),
                      {{"generator", generator(3.0, 0.5, true, 1800000.0)}});
  j["policies"]["autoscaler"] = "TokenAware";
  j["check_invariants"] = true;
  j["seeds"] = {5};
  return parse(j);
}

bool engine_determinism(std::string& why) {
  const auto c = scaling_config(kInternVL);
  const auto a = run_seed(c, 5, 1.0), b = run_seed(c, 5, 1.0);
  const fs::path pa = scratch_dir() / "det_a.csv", pb = scratch_dir() / "det_b.csv";
  write_requests_csv(a.log, pa);
  write_requests_csv(b.log, pb);
  if (slurp(pa) != slurp(pb)) return why = "request logs differ", false;
  if (windows_json(a.log) != windows_json(b.log)) return why = "window logs differ", false;
  return true;
}

bool conservation_and_causality(std::string& why) {
  for (const std::string model : {kLlama, kInternVL}) {
    const auto c = scaling_config(model);
    const auto r = run_seed(c, 5, 1.0);
    bool scaled = false;
    for (const auto& w : r.log.windows) scaled = scaled || !w.notes.empty() || !w.targets.empty();
    if (!scaled) return why = model + ": no scaling decisions", false;
    if (r.log.completed != r.log.arrived || r.log.requests.size() != r.log.arrived) {
      return why = model + ": requests lost", false;
    }
    for (const auto& q : r.log.requests) {
      std::vector<double> seq{q.arrival_ms};
      for (const auto& s : q.shards) {
        if (s.preprocess_start_ms < q.arrival_ms || s.preprocess_end_ms < s.preprocess_start_ms ||
            s.encode_start_ms < s.preprocess_end_ms || s.encode_end_ms < s.encode_start_ms ||
            s.encode_end_ms > q.encode_end_ms) {
          return why = model + ": shard timestamps out of order for request " + std::to_string(q.id), false;
        }
      }
      if (q.modality == Modality::ImageText) seq.insert(seq.end(), {q.encode_end_ms, q.transfer_end_ms});
      seq.insert(seq.end(), {q.prefill_start_ms, q.prefill_end_ms, q.decode_start_ms, q.completion_ms});
      if (!std::is_sorted(seq.begin(), seq.end()) || seq.front() < 0.0) {
        return why = model + ": timestamps out of order for request " + std::to_string(q.id), false;
      }
    }
  }
  return true;
}

bool gpu_accounting(std::string& why) {
  const auto c = scaling_config(kLlama);
  const auto r = run_seed(c, 5, 1.0);
  const double h = r.log.horizon_ms;
  const int total = c.engine.cluster.servers * c.engine.cluster.gpus_per_server;
  double gpu_ms = 0.0;
  const auto& a = r.log.allocation;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].gpus < 0 || a[i].gpus > total) return why = "allocation outside inventory", false;
    const double s = std::min(a[i].time_ms, h);
    const double e = i + 1 < a.size() ? std::min(a[i + 1].time_ms, h) : h;
    gpu_ms += (e - s) * a[i].gpus;
  }
  if (std::abs(gpu_ms / 1000.0 - r.log.gpu_seconds) > 1e-6 * std::max(1.0, gpu_ms)) {
    return why = "GPU-seconds differ from the allocation integral", false;
  }
  double windows = 0.0;
  for (const auto& w : r.log.windows) windows += w.gpu_seconds;
  if (std::abs(windows - r.log.gpu_seconds) > 1e-6 * std::max(1.0, windows)) {
    return why = "window GPU-seconds do not sum to the total", false;
  }
  return true;
}

bool routing_oracle(std::string& why) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> size(1, 8), tok(0, 20);
  for (int trial = 0; trial < 20000; ++trial) {
    std::vector<InstanceLoad> pool(static_cast<std::size_t>(size(rng)));
    for (std::size_t i = 0; i < pool.size(); ++i) {
      pool[i] = {static_cast<InstanceId>(3 * i + 1), tok(rng) * 100, tok(rng) * 100};
    }
    for (const auto arch : {Architecture::DecOnly, Architecture::CroAttn}) {
      std::size_t cursor = 0;
      const auto got = route_text(pool, arch, RouterKind::LeastPendingModalityAware, cursor);
      auto key = [&](const InstanceLoad& l) {
        return l.pending_text_tokens + (arch == Architecture::DecOnly ? l.pending_image_tokens : 0);
      };
      InstanceId best = pool[0].id;
      std::int64_t best_key = key(pool[0]);
      for (const auto& l : pool) {
        if (key(l) < best_key || (key(l) == best_key && l.id < best)) {
          best = l.id;
          best_key = key(l);
        }
      }
      if (!got || *got != best) return why = "route_text disagrees with the argmin", false;
    }
  }
  return true;
}

bool autoscaler_table(std::string& why) {
  struct Row {
    double ml, mc;
    int expect;
  };
  const Row rows[] = {{1000, 400, 3}, {0, 400, 1},   {400, 400, 1}, {401, 400, 2},
                      {800, 400, 2},  {1, 1e6, 1},   {7999, 1000, 8}, {8000, 1000, 8},
                      {8001, 1000, 9}, {3.3, 1.1, 3}};
  for (const auto& r : rows) {
    if (replicas_for(r.ml, r.mc) != r.expect) {
      return why = "ceil(" + fmt("%.1f", r.ml) + "/" + fmt("%.1f", r.mc) + ") mismatch", false;
    }
    if (replicas_for(r.ml * 7.0, r.mc * 7.0) != r.expect) return why = "not scale invariant", false;
  }
  return true;
}

bool starvation_bound(std::string& why) {
  // One server; small items arrive back to back at its service rate, so one
  // is always queued, and a single large item arrives among them.
  struct Item {
    double arrive, service;
    std::int64_t tokens;
  };
  std::vector<Item> items;
  for (int i = 0; i < 2000; ++i) items.push_back({i * 10.0, 10.0, 100});
  items.push_back({505.0, 120.0, 8000});
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.arrive < b.arrive; });
  const double aging = 400.0;
  double max_service = 0.0;
  for (const auto& it : items) max_service = std::max(max_service, it.service);
  std::vector<std::size_t> waiting;
  std::size_t next = 0;
  double now = 0.0, worst = 0.0, large_wait = 0.0;
  while (next < items.size() || !waiting.empty()) {
    while (next < items.size() && items[next].arrive <= now) waiting.push_back(next++);
    if (waiting.empty()) {
      now = items[next].arrive;
      continue;
    }
    std::vector<QueuedItemView> views;
    for (auto w : waiting) views.push_back({items[w].tokens, items[w].arrive, aging, w});
    const int pick = schedule_next(views, now, SchedulerKind::SLOPriority);
    const std::size_t w = waiting[static_cast<std::size_t>(pick)];
    worst = std::max(worst, now - items[w].arrive);
    if (items[w].tokens > 100) large_wait = now - items[w].arrive;
    now += items[w].service;
    waiting.erase(waiting.begin() + pick);
  }
  if (worst > aging + max_service) return why = "wait " + fmt("%.0f", worst) + " ms exceeds bound", false;
  if (large_wait < aging) return why = "large item was never held back", false;
  return true;
}

bool quantile_oracle(std::string& why) {
  std::mt19937_64 rng(3);
  std::lognormal_distribution<double> dist(5.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(1 + trial * 7);
    for (auto& x : v) x = dist(rng);
    std::vector<double> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (double q : {0.5, 0.9, 0.99}) {
      const auto n = sorted.size();
      std::size_t rank = 1;
      while (static_cast<double>(rank) < q * static_cast<double>(n) - 1e-9) ++rank;
      if (quantile(v, q) != sorted[rank - 1]) return why = "quantile differs from full sort", false;
    }
  }
  return true;
}

bool shard_makespan(std::string& why) {
  const LatencyProfile p = calibrate(preset_targets(kInternVL), model_preset(kInternVL));
  Request r;
  r.text_tokens = 100;
  for (int i = 0; i < 4; ++i) r.images.push_back(make_image(896, 896, p.model));
  const int tiles = r.images[0].tiles;
  const double one = sharded_encode_makespan_ms(r, 1, 1, p);
  const double four = sharded_encode_makespan_ms(r, 4, 1, p);
  const double analytic_one = encode_latency_ms(4 * tiles, 1, p);
  const double analytic_four = encode_latency_ms(tiles, 1, p);
  if (std::abs(one - analytic_one) > 1e-9 * analytic_one ||
      std::abs(four - analytic_four) > 1e-9 * analytic_four) {
    return why = "makespan differs from the analytic schedule", false;
  }
  if (std::abs(one / four - 4.0) > 1e-9) return why = "speedup is not 4x", false;
  return true;
}

Outcome property_suites() {
  const std::vector<std::pair<std::string, std::function<bool(std::string&)>>> suites = {
      {"determinism", engine_determinism}, {"conservation+causality", conservation_and_causality},
      {"gpu_accounting", gpu_accounting}, {"routing_argmin", routing_oracle},
      {"autoscaler_table", autoscaler_table}, {"starvation", starvation_bound},
      {"quantile", quantile_oracle},         {"shard_makespan", shard_makespan}};
  Outcome o{true, ""};
  for (const auto& [name, fn] : suites) {
    const auto t0 = Clock::now();
    std::string why;
    bool ok = false;
    try {
      ok = fn(why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    const double dt = seconds_since(t0);
    if (dt >= 60.0) {
      ok = false;
      why += " over 60 s";
    }
    o.pass = o.pass && ok;
    o.detail += name + (ok ? " ok" : " FAIL(" + why + ")") + " " + fmt("%.1fs", dt) + "; ";
  }
  return o;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "calibration fidelity", 1.0, calibration_fidelity},
      {2, "mixed-modality curve", 10.0, mixed_modality_curve},
      {3, "static decoupling gain", 300.0, static_gain},
      {4, "throughput gain", 900.0, throughput_gain},
      {5, "ablation ordering", 0.0, ablation_ordering},
      {6, "autoscaling cost", 600.0, autoscaling_cost},
      {7, "PD composability", 0.0, pd_composability},
      {8, "transfer sensitivity", 0.0, transfer_sensitivity},
      {9, "property suites", 0.0, property_suites},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double dt = seconds_since(t0);
    if (c.limit_s > 0.0 && dt >= c.limit_s) {
      o.pass = false;
      o.detail += " [over " + fmt("%.0f", c.limit_s) + " s]";
    }
    failed += o.pass ? 0 : 1;
    std::printf("criterion %d %-24s %s  %.1fs  %s\n", c.id, c.name, o.pass ? "PASS" : "FAIL", dt,
                o.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(scratch_dir());
  return failed == 0 ? 0 : 1;
}
