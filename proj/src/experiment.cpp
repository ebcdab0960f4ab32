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

#include "mmsim/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace mmsim {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Runs `n` independent jobs on up to hardware_concurrency threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& job) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(n, std::thread::hardware_concurrency()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          job(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(path + ": expected an object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (!allowed.count(k)) {
      throw ConfigError((path.empty() ? k : path + "." + k) + ": unknown field");
    }
  }
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

template <typename T>
T field(const json& j, const std::string& path, const std::string& key, T dflt) {
  if (!j.contains(key)) return dflt;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(join(path, key) + ": wrong type");
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

ModelSpec parse_model(const json& j, const fs::path& base) {
  if (j.is_string()) {
    const std::string s = j.get<std::string>();
    if (s.size() > 5 && s.substr(s.size() - 5) == ".json") {
      const fs::path p = resolve(base, s);
      if (!fs::exists(p)) throw ConfigError("model: file not found: " + p.string());
      auto specs = load_model_specs(p);
      if (specs.size() != 1) throw ConfigError("model: spec file must hold one model");
      return specs.front();
    }
    try {
      return model_preset(s);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  if (j.is_object()) {
    try {
      ModelSpec m = j.get<ModelSpec>();
      m.validate();
      return m;
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("model: ") + e.what());
    } catch (const json::exception& e) {
      throw ConfigError(std::string("model: ") + e.what());
    }
  }
  throw ConfigError("model: expected a preset name, spec path or object");
}

LatencyProfile parse_profile(const json& root, const ModelSpec& model, const fs::path& base) {
  if (root.contains("profile")) {
    const fs::path p = resolve(base, field<std::string>(root, "", "profile", ""));
    if (!fs::exists(p)) throw ConfigError("profile: file not found: " + p.string());
    LatencyProfile prof = load_profile(p);
    if (prof.model.name != model.name) {
      throw ConfigError("profile: file is for model '" + prof.model.name + "', not '" +
                        model.name + "'");
    }
    return prof;
  }
  CalibrationTargets targets;
  if (root.contains("targets")) {
    const json& t = root.at("targets");
    try {
      if (t.is_string()) {
        const fs::path p = resolve(base, t.get<std::string>());
        if (!fs::exists(p)) throw ConfigError("targets: file not found: " + p.string());
        std::ifstream in(p);
        targets = json::parse(in).get<CalibrationTargets>();
      } else {
        targets = t.get<CalibrationTargets>();
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("targets: ") + e.what());
    }
  } else {
    try {
      targets = preset_targets(model.name);
    } catch (const std::exception&) {
      throw ConfigError("profile: no built-in targets for model '" + model.name +
                        "'; give a profile or targets");
    }
  }
  try {
    return calibrate(targets, model);
  } catch (const CalibrationError& e) {
    throw ConfigError("targets: constraint " + e.constraint() + ": " + e.what());
  }
}

PolicySet parse_policies(const json& j, Topology topo) {
  PolicySet p;
  p.topology = topo;
  if (topo == Topology::Monolith) p.router = RouterKind::RoundRobin;
  if (j.is_null()) return p;
  const std::string path = "policies";
  check_keys(j, path,
             {"router", "scheduler", "autoscaler", "placement", "max_fanout", "aging_fraction",
              "attainment_threshold", "scale_down_utilization", "scale_down_windows",
              "headroom_growth", "headroom_decay"});
  auto parse = [&](const char* key, auto parser, auto& out) {
    if (!j.contains(key)) return;
    try {
      out = parser(field<std::string>(j, path, key, ""));
    } catch (const ConfigError& e) {
      throw ConfigError(join(path, key) + ": " + e.what());
    }
  };
  parse("router", parse_router, p.router);
  parse("scheduler", parse_scheduler, p.scheduler);
  parse("autoscaler", parse_autoscaler, p.autoscaler);
  parse("placement", parse_placement, p.placement);
  p.max_fanout = field(j, path, "max_fanout", p.max_fanout);
  p.aging_fraction = field(j, path, "aging_fraction", p.aging_fraction);
  p.attainment_threshold = field(j, path, "attainment_threshold", p.attainment_threshold);
  p.scale_down_utilization = field(j, path, "scale_down_utilization", p.scale_down_utilization);
  p.scale_down_windows = field(j, path, "scale_down_windows", p.scale_down_windows);
  p.headroom_growth = field(j, path, "headroom_growth", p.headroom_growth);
  p.headroom_decay = field(j, path, "headroom_decay", p.headroom_decay);
  return p;
}

std::vector<std::uint64_t> parse_seeds(const json& j, const std::string& path) {
  std::vector<std::uint64_t> seeds;
  if (!j.is_array() || j.empty()) throw ConfigError(path + ": expected a non-empty array");
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_unsigned() && !(j[i].is_number_integer() && j[i].get<long long>() >= 0)) {
      throw ConfigError(path + "[" + std::to_string(i) + "]: expected a non-negative integer");
    }
    seeds.push_back(j[i].get<std::uint64_t>());
  }
  return seeds;
}

// Best-effort line of the last component of a dotted field path.
int locate_line(const std::string& text, const std::string& path) {
  std::size_t pos = 0;
  std::string component;
  std::vector<std::string> parts;
  for (char c : path) {
    if (c == '.' || c == '[') {
      if (!component.empty()) parts.push_back(component);
      component.clear();
      if (c == '[') component = "[";
    } else if (c == ']') {
      parts.push_back(component);
      component.clear();
    } else {
      component += c;
    }
  }
  if (!component.empty()) parts.push_back(component);
  bool found = false;
  for (const auto& part : parts) {
    if (part.empty() || part[0] == '[') continue;
    const auto at = text.find("\"" + part + "\"", pos);
    if (at == std::string::npos) break;
    pos = at;
    found = true;
  }
  if (!found) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(pos), '\n'));
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

SLOSpec derive_slo(const LatencyProfile& profile, int tp, int cpu_cores, double slo_factor,
                   double percentile) {
  auto isolated = [&](const Request& r) {
    const auto tot = request_totals(r);
    double t = prefill_latency_ms(tot.text, tot.image, tp, profile);
    if (!r.images.empty()) {
      t += preprocess_latency_ms(r.total_tiles(), cpu_cores, profile);
      t += encode_latency_ms(r.total_tiles(), tp, profile);
    }
    return t;
  };
  SLOSpec slo;
  slo.ttft_base_text_ms = isolated(profile.reference_request(false));
  slo.ttft_base_image_ms = isolated(profile.reference_request(true));
  slo.tbt_base_ms = tbt_latency_ms(1, tp, profile);
  slo.slo_factor = slo_factor;
  slo.percentile = percentile;
  return slo;
}

ExperimentConfig parse_experiment(const json& j, const fs::path& base_dir) {
  check_keys(j, "",
             {"model", "profile", "targets", "topology", "policies", "cluster", "instances",
              "workload", "slo", "horizon_ms", "drain_ms", "start_delay_ms", "window_ms",
              "warmup_fraction", "seeds", "transfer", "load_scale", "capacity",
              "check_invariants", "description"});
  ExperimentConfig c;
  c.base_dir = base_dir;
  if (!j.contains("model")) throw ConfigError("model: required field missing");
  c.model = parse_model(j.at("model"), base_dir);
  c.profile = parse_profile(j, c.model, base_dir);

  Topology topo = Topology::Decoupled;
  if (j.contains("topology")) {
    try {
      topo = parse_topology(field<std::string>(j, "", "topology", ""));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("topology: ") + e.what());
    }
  }
  auto& e = c.engine;
  e.policies = parse_policies(j.contains("policies") ? j.at("policies") : json(), topo);

  if (j.contains("cluster")) {
    const json& cl = j.at("cluster");
    check_keys(cl, "cluster", {"servers", "gpus_per_server", "cpu_cores_per_server"});
    e.cluster.servers = field(cl, "cluster", "servers", e.cluster.servers);
    e.cluster.gpus_per_server = field(cl, "cluster", "gpus_per_server", e.cluster.gpus_per_server);
    e.cluster.cpu_cores_per_server =
        field(cl, "cluster", "cpu_cores_per_server", e.cluster.cpu_cores_per_server);
  }

  if (!j.contains("instances") || !j.at("instances").is_array()) {
    throw ConfigError("instances: required array missing");
  }
  const json& insts = j.at("instances");
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const std::string path = "instances[" + std::to_string(i) + "]";
    check_keys(insts[i], path, {"kind", "tp", "count", "max_batch"});
    InstanceSpec s;
    try {
      s.kind = parse_instance_kind(field<std::string>(insts[i], path, "kind", ""));
    } catch (const ConfigError& err) {
      throw ConfigError(path + ".kind: " + err.what());
    }
    s.tp = field(insts[i], path, "tp", s.tp);
    s.count = field(insts[i], path, "count", s.count);
    s.max_batch = field(insts[i], path, "max_batch", s.max_batch);
    e.instances.push_back(s);
  }

  if (!j.contains("workload")) throw ConfigError("workload: required field missing");
  const json& w = j.at("workload");
  check_keys(w, "workload", {"trace", "generator"});
  if (w.contains("trace") == w.contains("generator")) {
    throw ConfigError("workload: exactly one of trace or generator is required");
  }
  if (w.contains("trace")) {
    const fs::path p = resolve(base_dir, field<std::string>(w, "workload", "trace", ""));
    if (!fs::exists(p)) throw ConfigError("workload.trace: file not found: " + p.string());
    c.trace = p;
  } else {
    try {
      c.generator = w.at("generator").get<GeneratorConfig>();
      c.generator->validate();
    } catch (const ConfigError& err) {
      throw ConfigError(std::string("workload.generator: ") + err.what());
    } catch (const json::exception& err) {
      throw ConfigError(std::string("workload.generator: ") + err.what());
    }
  }

  e.horizon_ms = field(j, "", "horizon_ms", e.horizon_ms);
  e.drain_ms = field(j, "", "drain_ms", e.drain_ms);
  e.start_delay_ms = field(j, "", "start_delay_ms", e.start_delay_ms);
  e.window_ms = field(j, "", "window_ms", e.window_ms);
  e.check_invariants = field(j, "", "check_invariants", false);
  c.warmup_fraction = field(j, "", "warmup_fraction", c.warmup_fraction);
  if (c.warmup_fraction < 0.0 || c.warmup_fraction >= 1.0) {
    throw ConfigError("warmup_fraction: must be in [0, 1)");
  }
  c.load_scale = field(j, "", "load_scale", c.load_scale);
  if (!(c.load_scale > 0.0)) throw ConfigError("load_scale: must be > 0");
  if (j.contains("seeds")) c.seeds = parse_seeds(j.at("seeds"), "seeds");

  if (j.contains("transfer")) {
    const json& t = j.at("transfer");
    check_keys(t, "transfer",
               {"medium", "rdma_median_ms", "rdma_sigma", "tcp_median_ms", "tcp_sigma"});
    try {
      e.transfer.medium = parse_transfer_medium(field<std::string>(t, "transfer", "medium", "RDMA"));
    } catch (const ConfigError& err) {
      throw ConfigError(std::string("transfer.medium: ") + err.what());
    }
    e.transfer.rdma_median_ms = field(t, "transfer", "rdma_median_ms", e.transfer.rdma_median_ms);
    e.transfer.rdma_sigma = field(t, "transfer", "rdma_sigma", e.transfer.rdma_sigma);
    e.transfer.tcp_median_ms = field(t, "transfer", "tcp_median_ms", e.transfer.tcp_median_ms);
    e.transfer.tcp_sigma = field(t, "transfer", "tcp_sigma", e.transfer.tcp_sigma);
  }

  const json slo_j = j.contains("slo") ? j.at("slo") : json::object();
  check_keys(slo_j, "slo",
             {"slo_factor", "percentile", "monolith_tp", "ttft_base_text_ms",
              "ttft_base_image_ms", "tbt_base_ms"});
  const int mono_tp = field(slo_j, "slo", "monolith_tp", c.model.default_tp_text);
  const int cores = std::max(1, e.cluster.cpu_cores_per_server * mono_tp /
                                    std::max(1, e.cluster.gpus_per_server));
  try {
    e.slo = derive_slo(c.profile, mono_tp, cores, field(slo_j, "slo", "slo_factor", 5.0),
                       field(slo_j, "slo", "percentile", 0.99));
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("slo.monolith_tp: ") + err.what());
  }
  e.slo.ttft_base_text_ms = field(slo_j, "slo", "ttft_base_text_ms", e.slo.ttft_base_text_ms);
  e.slo.ttft_base_image_ms = field(slo_j, "slo", "ttft_base_image_ms", e.slo.ttft_base_image_ms);
  e.slo.tbt_base_ms = field(slo_j, "slo", "tbt_base_ms", e.slo.tbt_base_ms);
  try {
    e.slo.validate();
  } catch (const ConfigError& err) {
    throw ConfigError(std::string("slo: ") + err.what());
  }

  if (j.contains("capacity")) {
    const json& cap = j.at("capacity");
    check_keys(cap, "capacity", {"seeds", "initial_scale", "min_scale", "max_scale", "tolerance"});
    if (cap.contains("seeds")) c.capacity.seeds = parse_seeds(cap.at("seeds"), "capacity.seeds");
    auto& s = c.capacity.search;
    s.initial_scale = field(cap, "capacity", "initial_scale", s.initial_scale);
    s.min_scale = field(cap, "capacity", "min_scale", s.min_scale);
    s.max_scale = field(cap, "capacity", "max_scale", s.max_scale);
    s.tolerance = field(cap, "capacity", "tolerance", s.tolerance);
    if (!(s.tolerance > 0.0)) throw ConfigError("capacity.tolerance: must be > 0");
  }

  // Surface engine-level problems (kinds, TP, placement) at load time.
  try {
    e.validate();
    Simulator probe(e, c.profile);
  } catch (const ConfigError& err) {
    const std::string msg = err.what();
    if (msg.rfind("instances", 0) == 0 || msg.rfind("cluster", 0) == 0 ||
        msg.rfind("policies", 0) == 0) {
      throw;
    }
    throw ConfigError("instances: " + msg);
  }
  return c;
}

ExperimentConfig load_experiment(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot read config file");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line =
        1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ConfigError(path.string() + ":" + std::to_string(line) + ": invalid JSON: " + e.what());
  }
  try {
    return parse_experiment(j, path.parent_path());
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    const std::string field_path = colon == std::string::npos ? "" : msg.substr(0, colon);
    const int line = locate_line(text, field_path);
    throw ConfigError(path.string() + ":" + (line > 0 ? std::to_string(line) + ":" : "") + " " +
                      msg);
  }
}

std::vector<Request> build_workload(const ExperimentConfig& config, std::uint64_t seed,
                                    double load_scale) {
  if (config.trace) {
    auto loaded = load_trace(*config.trace, config.model);
    auto reqs = std::move(loaded.requests);
    for (auto& r : reqs) r.arrival_ms /= load_scale;
    return reqs;
  }
  GeneratorConfig g = *config.generator;
  g.seed = seed;
  return generate(g, config.engine.horizon_ms, config.model, load_scale);
}

SeedResult run_seed(const ExperimentConfig& config, std::uint64_t seed, double load_scale) {
  SeedResult res;
  res.seed = seed;
  res.load_scale = load_scale;
  const auto workload = build_workload(config, seed, load_scale);
  EngineConfig e = config.engine;
  e.seed = seed;
  res.log = run(e, workload, config.profile);
  res.offered_rate = static_cast<double>(res.log.arrived) / (e.horizon_ms / 1000.0);
  res.latency = summarize_latency(res.log, config.warmup_fraction, e.window_ms);
  res.cost = cost_summary(res.log, e.window_ms);
  res.feasibility = check_feasibility(res.log, e.slo, config.warmup_fraction);
  res.attainment = overall_attainment(res.log, e.slo, config.warmup_fraction);
  return res;
}

std::vector<SeedResult> run_seeds(const ExperimentConfig& config,
                                  const std::vector<std::uint64_t>& seeds, double load_scale) {
  std::vector<SeedResult> out(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) { out[i] = run_seed(config, seeds[i], load_scale); });
  return out;
}

namespace {

json policies_json(const PolicySet& p) {
  return {{"router", to_string(p.router)},       {"scheduler", to_string(p.scheduler)},
          {"autoscaler", to_string(p.autoscaler)}, {"placement", to_string(p.placement)},
          {"topology", to_string(p.topology)},   {"max_fanout", p.max_fanout}};
}

}  // namespace

json summary_json(const ExperimentConfig& config, const std::vector<SeedResult>& results) {
  json j;
  j["model"] = config.model.name;
  j["architecture"] = to_string(config.model.architecture);
  j["policies"] = policies_json(config.engine.policies);
  j["slo"] = {{"ttft_text_ms", config.engine.slo.ttft_slo_ms(Modality::TextOnly)},
              {"ttft_image_ms", config.engine.slo.ttft_slo_ms(Modality::ImageText)},
              {"tbt_ms", config.engine.slo.tbt_slo_ms()},
              {"slo_factor", config.engine.slo.slo_factor}};
  j["transfer"] = to_string(config.engine.transfer.medium);
  j["horizon_ms"] = config.engine.horizon_ms;
  auto runs = json::array();
  double mean_ttft = 0.0, p99_worst = 0.0, gpu_s = 0.0, att_min = 1.0;
  std::size_t counted = 0;
  for (const auto& r : results) {
    json s;
    s["seed"] = r.seed;
    s["load_scale"] = r.load_scale;
    s["offered_rate"] = r.offered_rate;
    s["arrived"] = r.log.arrived;
    s["completed"] = r.log.completed;
    s["in_flight"] = r.log.in_flight;
    s["events"] = r.log.events;
    s["latency"] = to_json(r.latency);
    s["cost"] = to_json(r.cost);
    s["slo_attainment"] = r.attainment;
    s["feasible"] = r.feasibility.feasible;
    s["p99_ttft_text_ms"] = r.feasibility.p99_ttft_text_ms;
    s["p99_ttft_image_ms"] = r.feasibility.p99_ttft_image_ms;
    s["p99_tbt_ms"] = r.feasibility.p99_tbt_ms;
    runs.push_back(std::move(s));
    if (!r.latency.empty) {
      mean_ttft += r.latency.ttft.at("all").mean;
      p99_worst = std::max(p99_worst, r.latency.ttft.at("all").p99);
      ++counted;
    }
    gpu_s += r.cost.gpu_seconds;
    att_min = std::min(att_min, r.attainment);
  }
  j["runs"] = runs;
  j["aggregate"] = {
      {"mean_ttft_ms", counted ? mean_ttft / static_cast<double>(counted) : 0.0},
      {"worst_p99_ttft_ms", p99_worst},
      {"mean_gpu_seconds", results.empty() ? 0.0 : gpu_s / static_cast<double>(results.size())},
      {"min_slo_attainment", att_min}};
  return j;
}

ThroughputResult run_capacity(const ExperimentConfig& config) {
  return max_throughput(
      [&](double scale) {
        auto results = run_seeds(config, config.capacity.seeds, scale);
        ThroughputProbe p;
        p.feasible = true;
        double rate = 0.0;
        for (const auto& r : results) {
          p.feasible = p.feasible && r.feasibility.feasible;
          rate += r.offered_rate;
        }
        p.rate = rate / static_cast<double>(results.size());
        return p;
      },
      config.capacity.search);
}

const std::vector<std::string>& sweep_axes() {
  static const std::vector<std::string> axes{"ratio",      "image_fraction", "load_scale",
                                             "slo_factor", "servers",        "transfer"};
  return axes;
}

void apply_axis(ExperimentConfig& config, const std::string& axis, const std::string& value) {
  auto number = [&](const std::string& v) {
    try {
      std::size_t used = 0;
      const double d = std::stod(v, &used);
      if (used != v.size()) throw std::invalid_argument(v);
      return d;
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + value + "' is not a number for axis " + axis);
    }
  };
  auto& e = config.engine;
  if (axis == "ratio") {
    const auto colon = value.find(':');
    if (colon == std::string::npos) throw ConfigError("ratio values look like I:T, got " + value);
    const int img = static_cast<int>(number(value.substr(0, colon)));
    const int txt = static_cast<int>(number(value.substr(colon + 1)));
    if (is_monolithic(e.policies.topology)) {
      throw ConfigError("axis ratio needs a decoupled topology");
    }
    const InstanceKind tk = prefill_kind(e.policies.topology);
    for (auto& s : e.instances) {
      if (s.kind == InstanceKind::Image) s.count = img;
      if (s.kind == tk) s.count = txt;
    }
  } else if (axis == "image_fraction") {
    if (!config.generator) throw ConfigError("axis image_fraction needs a generator workload");
    std::string v = value;
    double f = 0.0;
    if (!v.empty() && v.back() == '%') {
      f = number(v.substr(0, v.size() - 1)) / 100.0;
    } else {
      f = number(v);
    }
    if (f < 0.0 || f > 1.0) throw ConfigError("image_fraction must be in [0, 1]");
    config.generator->image_request_fraction = f;
  } else if (axis == "load_scale") {
    config.load_scale = number(value);
    if (!(config.load_scale > 0.0)) throw ConfigError("load_scale must be > 0");
  } else if (axis == "slo_factor") {
    e.slo.slo_factor = number(value);
    e.slo.validate();
  } else if (axis == "servers") {
    e.cluster.servers = static_cast<int>(number(value));
  } else if (axis == "transfer") {
    e.transfer.medium = parse_transfer_medium(value);
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "'");
  }
  e.validate();
}

// ------------------------------------------------------------------ commands

namespace {

int guarded(std::ostream& err, const std::function<int()>& body) {
  try {
    return body();
  } catch (const CalibrationError& e) {
    err << "error: constraint " << e.constraint() << ": " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "runtime error: " << e.what() << "\n";
    return 1;
  }
}

void write_series(const std::vector<SeedResult>& results, const fs::path& path) {
  std::ofstream out(path);
  out << "seed,window_start_ms,window_end_ms,gpus,gpu_seconds,arrivals,completions,"
         "slo_attainment,attainment_vacuous,image_token_rate,text_token_rate,"
         "image_instances,text_instances,prefill_instances,decode_instances,"
         "monolith_instances\n";
  for (const auto& r : results) {
    for (const auto& w : r.log.windows) {
      auto count = [&](InstanceKind k) {
        auto it = w.instances.find(k);
        return it == w.instances.end() ? 0 : it->second;
      };
      out << r.seed << ',' << fmt(w.start_ms) << ',' << fmt(w.end_ms) << ',' << w.gpus << ','
          << fmt(w.gpu_seconds) << ',' << w.arrivals << ',' << w.completions << ','
          << fmt(w.attainment, 6) << ',' << (w.attainment_vacuous ? 1 : 0) << ','
          << fmt(w.image_token_rate) << ',' << fmt(w.text_token_rate) << ','
          << count(InstanceKind::Image) << ',' << count(InstanceKind::Text) << ','
          << count(InstanceKind::Prefill) << ',' << count(InstanceKind::Decode) << ','
          << count(InstanceKind::Monolith) + count(InstanceKind::MonolithPrefill) << '\n';
    }
  }
}

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  out << j.dump(2) << "\n";
}

}  // namespace

int cmd_simulate(const fs::path& config_path, const fs::path& out,
                 const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& msg,
                 std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig config = load_experiment(config_path);
    if (seeds) config.seeds = *seeds;
    const auto results = run_seeds(config, config.seeds, config.load_scale);
    fs::create_directories(out);
    for (const auto& r : results) {
      write_requests_csv(r.log, out / ("requests_seed" + std::to_string(r.seed) + ".csv"));
      write_json(windows_json(r.log), out / ("windows_seed" + std::to_string(r.seed) + ".json"));
      const auto& all = r.latency.ttft;
      msg << "seed " << r.seed << ": " << r.log.completed << "/" << r.log.arrived
          << " completed";
      if (!r.latency.empty) {
        msg << ", TTFT mean " << fmt(all.at("all").mean, 1) << " ms, P99 "
            << fmt(all.at("all").p99, 1) << " ms";
      }
      msg << ", GPU-s " << fmt(r.cost.gpu_seconds, 0) << ", attainment "
          << fmt(r.attainment, 4) << "\n";
    }
    write_json(summary_json(config, results), out / "summary.json");
    write_series(results, out / "series.csv");
    return 0;
  });
}

int cmd_capacity(const fs::path& config_path, const fs::path& out,
                 const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& msg,
                 std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig config = load_experiment(config_path);
    if (seeds) config.capacity.seeds = *seeds;
    const auto result = run_capacity(config);
    json probes = json::array();
    for (const auto& p : result.probes) {
      msg << "probe scale " << fmt(p.load_scale, 4) << " rate " << fmt(p.rate, 3) << " req/s: "
          << (p.feasible ? "meets SLO" : "violates SLO") << "\n";
      probes.push_back({{"load_scale", p.load_scale}, {"rate", p.rate}, {"feasible", p.feasible}});
    }
    if (result.infeasible) {
      err << "warning: objectives unattainable even at the minimum load; rate 0\n";
    }
    msg << "max throughput: " << fmt(result.rate, 3) << " req/s (load scale "
        << fmt(result.load_scale, 4) << ")\n";
    fs::create_directories(out);
    write_json({{"model", config.model.name},
                {"policies", policies_json(config.engine.policies)},
                {"rate", result.rate},
                {"load_scale", result.load_scale},
                {"infeasible", result.infeasible},
                {"probes", probes}},
               out / "capacity.json");
    return 0;
  });
}

int cmd_sweep(const fs::path& config_path, const fs::path& out, const std::string& axis,
              const std::vector<std::string>& values,
              const std::optional<std::vector<std::uint64_t>>& seeds, std::ostream& msg,
              std::ostream& err) {
  return guarded(err, [&] {
    const auto& axes = sweep_axes();
    if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
      throw ConfigError("axis: unknown sweep axis '" + axis + "'");
    }
    if (values.empty()) throw ConfigError("values: at least one value is required");
    const ExperimentConfig base = load_experiment(config_path);
    std::vector<ExperimentConfig> configs;
    for (const auto& v : values) {
      ExperimentConfig c = base;
      if (seeds) c.seeds = *seeds;
      apply_axis(c, axis, v);
      configs.push_back(std::move(c));
    }
    struct Task {
      std::size_t config;
      std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      for (auto s : configs[i].seeds) tasks.push_back({i, s});
    }
    std::vector<SeedResult> results(tasks.size());
    parallel_for(tasks.size(), [&](std::size_t t) {
      results[t] = run_seed(configs[tasks[t].config], tasks[t].seed,
                            configs[tasks[t].config].load_scale);
    });
    fs::create_directories(out);
    std::ofstream csv(out / "sweep.csv");
    csv << "axis,value,seeds,offered_rate,mean_ttft_ms,p50_ttft_ms,p90_ttft_ms,p99_ttft_ms,"
           "p99_ttft_text_ms,p99_ttft_image_ms,p99_tbt_ms,gpu_seconds,slo_attainment,"
           "completed,in_flight\n";
    std::size_t t = 0;
    for (std::size_t i = 0; i < configs.size(); ++i) {
      double rate = 0, mean = 0, p50 = 0, p90 = 0, p99 = 0, p99t = 0, p99i = 0, tbt = 0, gpu = 0;
      double att = 1.0;
      std::size_t completed = 0, inflight = 0, n = 0;
      for (; t < tasks.size() && tasks[t].config == i; ++t, ++n) {
        const auto& r = results[t];
        rate += r.offered_rate;
        if (!r.latency.empty) {
          const auto& a = r.latency.ttft.at("all");
          mean += a.mean;
          p50 = std::max(p50, a.p50);
          p90 = std::max(p90, a.p90);
          p99 = std::max(p99, a.p99);
        }
        p99t = std::max(p99t, r.feasibility.p99_ttft_text_ms);
        p99i = std::max(p99i, r.feasibility.p99_ttft_image_ms);
        tbt = std::max(tbt, r.feasibility.p99_tbt_ms);
        gpu += r.cost.gpu_seconds;
        att = std::min(att, r.attainment);
        completed += r.log.completed;
        inflight += r.log.in_flight;
      }
      const double dn = static_cast<double>(std::max<std::size_t>(n, 1));
      csv << axis << ',' << values[i] << ',' << n << ',' << fmt(rate / dn) << ','
          << fmt(mean / dn) << ',' << fmt(p50) << ',' << fmt(p90) << ',' << fmt(p99) << ','
          << fmt(p99t) << ',' << fmt(p99i) << ',' << fmt(tbt) << ',' << fmt(gpu / dn) << ','
          << fmt(att, 6) << ',' << completed << ',' << inflight << '\n';
      msg << axis << "=" << values[i] << ": mean TTFT " << fmt(mean / dn, 1) << " ms, P99 "
          << fmt(p99, 1) << " ms\n";
    }
    return 0;
  });
}

int cmd_calibrate(const fs::path& targets_path, const std::string& model_name,
                  const fs::path& out, bool force, std::ostream& msg, std::ostream& err) {
  return guarded(err, [&] {
    ModelSpec model;
    if (model_name.size() > 5 && model_name.substr(model_name.size() - 5) == ".json") {
      auto specs = load_model_specs(model_name);
      if (specs.size() != 1) throw ConfigError("model: spec file must hold one model");
      model = specs.front();
    } else {
      model = model_preset(model_name);
    }
    CalibrationTargets targets;
    if (targets_path.empty()) {
      targets = preset_targets(model.name);
    } else {
      std::ifstream in(targets_path);
      if (!in) throw ConfigError("targets: cannot read " + targets_path.string());
      try {
        targets = json::parse(in).get<CalibrationTargets>();
      } catch (const json::exception& e) {
        throw ConfigError(std::string("targets: ") + e.what());
      }
    }
    const fs::path file = out / "profiles" / (model.name + ".json");
    LatencyProfile profile;
    bool reused = false;
    if (fs::exists(file) && !force) {
      profile = load_profile(file);
      reused = true;
    } else {
      profile = calibrate(targets, model);
      fs::create_directories(file.parent_path());
      save_profile(profile, file);
    }
    const auto shares = predicted_breakdown(profile);
    msg << (reused ? "reused cached profile " : "wrote profile ") << file.string() << "\n";
    for (const auto& [stage, share] : shares) {
      msg << "  " << to_string(stage) << " share " << fmt(100.0 * share, 2) << "%\n";
    }
    for (const auto& [stage, target] : targets.ttft_breakdown) {
      auto it = shares.find(stage);
      if (it == shares.end() || std::abs(it->second - target) > 0.01) {
        throw CalibrationError("ttft_breakdown." + std::string(to_string(stage)),
                               "profile does not reproduce the target share");
      }
    }
    if (model.architecture == Architecture::CroAttn) {
      msg << "  mixed-modality gain " << fmt(predicted_mixed_gain(profile), 3) << "\n";
    }
    return 0;
  });
}

}  // namespace mmsim
