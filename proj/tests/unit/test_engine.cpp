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

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mmsim/engine.hpp"
#include "mmsim/experiment.hpp"
#include "mmsim/workload.hpp"

using namespace mmsim;
namespace fs = std::filesystem;

namespace {

LatencyProfile profile_for(const std::string& name) {
  return calibrate(preset_targets(name), model_preset(name));
}

EngineConfig decoupled(const LatencyProfile& p, std::vector<InstanceSpec> inst, int servers = 1) {
  EngineConfig e;
  e.cluster = {servers, 8, 96};
  e.instances = std::move(inst);
  e.policies.topology = Topology::Decoupled;
  e.slo = derive_slo(p, 8, 96, 5.0);
  e.horizon_ms = 600000.0;
  e.check_invariants = true;
  return e;
}

Request image_request(const LatencyProfile& p, int images, double at = 0.0, std::uint64_t id = 0) {
  Request r;
  r.id = id;
  r.arrival_ms = at;
  r.text_tokens = 500;
  r.output_tokens = 1;
  for (int i = 0; i < images; ++i) r.images.push_back(make_image(896, 896, p.model));
  return r;
}

std::string slurp(const fs::path& f) {
  std::ifstream in(f);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Request> stream(const LatencyProfile& p, double rate, double horizon, std::uint64_t seed) {
  GeneratorConfig g;
  g.base_rate = rate;
  g.seed = seed;
  g.text_len_min = 200;
  g.image_text_len_min = 100;
  g.images_per_request = {0.7, 0.2, 0.1};
  return generate(g, horizon, p.model);
}

}  // namespace

TEST_CASE("isolated request TTFT is the sum of its stages") {
  for (const char* name : {"Llama3.2-11B", "InternVL-26B"}) {
    CAPTURE(name);
    const auto p = profile_for(name);
    const auto cfg = decoupled(p, {{InstanceKind::Image, 4, 1, 0}, {InstanceKind::Text, 4, 1, 0}});
    const Request r = image_request(p, 1);
    const auto log = run(cfg, {r}, p);
    const auto& rec = log.requests.at(0);
    const auto tot = request_totals(r);
    const double expect = preprocess_latency_ms(r.total_tiles(), 48, p) +
                          encode_latency_ms(r.total_tiles(), 4, p) + rec.transfer_ms +
                          prefill_latency_ms(tot.text, tot.image, 4, p);
    CHECK(rec.transfer_ms > 0.0);
    CHECK(rec.ttft_ms() == doctest::Approx(expect));

    Request text;
    text.text_tokens = 700;
    const auto tl = run(cfg, {text}, p);
    CHECK(tl.requests.at(0).ttft_ms() == doctest::Approx(prefill_latency_ms(700, 0, 4, p)));
    CHECK(tl.requests.at(0).transfer_ms == 0.0);
  }
}

TEST_CASE("identical simultaneous requests queue serially on one encoder") {
  const auto p = profile_for("Llama3.2-11B");
  const auto cfg = decoupled(p, {{InstanceKind::Image, 4, 1, 0}, {InstanceKind::Text, 4, 1, 0}});
  const auto log = run(cfg, {image_request(p, 1, 0.0, 0), image_request(p, 1, 0.0, 1)}, p);
  const auto& a = log.requests.at(0);
  const auto& b = log.requests.at(1);
  const double enc = encode_latency_ms(image_request(p, 1).total_tiles(), 4, p);
  CHECK(b.ttft_ms() - b.transfer_ms == doctest::Approx(a.ttft_ms() - a.transfer_ms + enc));
}

TEST_CASE("images shard across idle encoders") {
  const auto p = profile_for("InternVL-26B");
  auto cfg = decoupled(p, {{InstanceKind::Image, 1, 4, 0}, {InstanceKind::Text, 4, 1, 0}});
  const Request r = image_request(p, 16);
  const auto log = run(cfg, {r}, p);
  const auto& rec = log.requests.at(0);
  REQUIRE(rec.shards.size() == 4);
  const double quarter = encode_latency_ms(r.total_tiles() / 4, 1, p);
  for (const auto& s : rec.shards) {
    CHECK(s.images == 4);
    CHECK(s.encode_end_ms - s.encode_start_ms == doctest::Approx(quarter));
  }
  CHECK(rec.encode_end_ms - rec.encode_start_ms() == doctest::Approx(quarter));
  CHECK(encode_latency_ms(r.total_tiles(), 1, p) == doctest::Approx(4.0 * quarter));
  CHECK(sharded_encode_makespan_ms(r, 4, 1, p) == doctest::Approx(quarter));
}

TEST_CASE("runs are deterministic") {
  const auto p = profile_for("InternVL-26B");
  auto cfg = decoupled(p, {{InstanceKind::Image, 4, 2, 0}, {InstanceKind::Text, 4, 6, 0}}, 4);
  const auto w = stream(p, 6.0, cfg.horizon_ms, 3);
  const auto a = run(cfg, w, p), b = run(cfg, w, p);
  const fs::path dir = fs::temp_directory_path() / "mmsim_test_engine";
  fs::create_directories(dir);
  write_requests_csv(a, dir / "a.csv");
  write_requests_csv(b, dir / "b.csv");
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(windows_json(a) == windows_json(b));
  CHECK(a.events == b.events);
  fs::remove_all(dir);
}

TEST_CASE("every request completes with causal timestamps") {
  for (auto topo : {Topology::Monolith, Topology::Decoupled, Topology::DecoupledPD, Topology::MonolithPD}) {
    CAPTURE(to_string(topo));
    const auto p = profile_for("InternVL-26B");
    EngineConfig cfg = decoupled(p, {}, 4);
    cfg.policies.topology = topo;
    if (is_monolithic(topo)) cfg.policies.router = RouterKind::RoundRobin;
    switch (topo) {
      case Topology::Monolith: cfg.instances = {{InstanceKind::Monolith, 4, 8, 0}}; break;
      case Topology::Decoupled:
        cfg.instances = {{InstanceKind::Image, 4, 2, 0}, {InstanceKind::Text, 4, 6, 0}};
        break;
      case Topology::DecoupledPD:
        cfg.instances = {{InstanceKind::Image, 4, 2, 0}, {InstanceKind::Prefill, 4, 5, 0},
                         {InstanceKind::Decode, 4, 1, 0}};
        break;
      case Topology::MonolithPD:
        cfg.instances = {{InstanceKind::MonolithPrefill, 4, 7, 0}, {InstanceKind::Decode, 4, 1, 0}};
        break;
    }
    const auto w = stream(p, 5.0, cfg.horizon_ms, 1);
    const auto log = run(cfg, w, p);
    CHECK(log.arrived == w.size());
    CHECK(log.completed == w.size());
    CHECK(log.in_flight == 0);
    for (const auto& r : log.requests) {
      CHECK(r.completed());
      CHECK(r.prefill_start_ms >= r.arrival_ms);
      CHECK(r.prefill_end_ms > r.prefill_start_ms);
      CHECK(r.decode_start_ms >= r.prefill_end_ms);
      CHECK(r.completion_ms >= r.decode_start_ms);
      if (r.modality == Modality::ImageText) {
        CHECK(r.encode_end_ms <= r.transfer_end_ms);
        CHECK(r.transfer_end_ms <= r.prefill_start_ms);
      }
      std::int64_t gaps = 0;
      for (const auto& s : r.tbt) gaps += s.count;
      CHECK(gaps == r.output_tokens - 1);
    }
  }
}

TEST_CASE("static clusters are charged for every placed GPU") {
  const auto p = profile_for("InternVL-26B");
  auto cfg = decoupled(p, {{InstanceKind::Image, 4, 2, 0}, {InstanceKind::Text, 4, 6, 0}}, 4);
  const auto log = run(cfg, stream(p, 2.0, cfg.horizon_ms, 1), p);
  CHECK(log.gpu_seconds == doctest::Approx(32.0 * cfg.horizon_ms / 1000.0));
  double windows = 0.0;
  for (const auto& w : log.windows) windows += w.gpu_seconds;
  CHECK(windows == doctest::Approx(log.gpu_seconds));
}

TEST_CASE("colocated placement of a text and two image instances") {
  const auto p = profile_for("InternVL-26B");
  auto cfg = decoupled(p, {{InstanceKind::Text, 4, 1, 0}, {InstanceKind::Image, 2, 2, 0}}, 2);
  Simulator sim(cfg, p);
  const auto& c = sim.cluster();
  REQUIRE(c.instances.size() == 3);
  for (const auto& inst : c.instances) CHECK(inst.server_id == c.instances[0].server_id);
  CHECK(c.gpus_placed() == 8);
}

TEST_CASE("drained instances finish their queue before stopping") {
  const auto p = profile_for("InternVL-26B");
  auto cfg = decoupled(p, {{InstanceKind::Image, 2, 1, 0}, {InstanceKind::Text, 2, 2, 0}});
  std::vector<Request> w;
  for (std::uint64_t i = 0; i < 40; ++i) {
    Request r;
    r.id = i;
    r.arrival_ms = static_cast<double>(i);
    r.text_tokens = 4000;
    r.output_tokens = 4;
    w.push_back(r);
  }
  Simulator sim(cfg, p);
  sim.load(w);
  sim.run_until(100.0);
  ScalingDecision d;
  d.targets = {{InstanceKind::Text, 1}};
  sim.apply_scaling(d);
  int draining = 0;
  for (const auto& inst : sim.cluster().instances) {
    if (inst.state == InstanceState::Draining) {
      ++draining;
      CHECK_FALSE(inst.idle());
    }
  }
  CHECK(draining == 1);
  const auto log = sim.finish();
  CHECK(log.completed == w.size());
  int stopped = 0;
  for (const auto& inst : sim.cluster().instances) stopped += inst.state == InstanceState::Stopped;
  CHECK(stopped == 1);
}

TEST_CASE("scaling a pool to zero is rejected") {
  const auto p = profile_for("InternVL-26B");
  Simulator sim(decoupled(p, {{InstanceKind::Image, 4, 1, 0}, {InstanceKind::Text, 4, 1, 0}}), p);
  ScalingDecision d;
  d.targets = {{InstanceKind::Text, 0}};
  CHECK_THROWS_AS(sim.apply_scaling(d), ConfigError);
  d.targets = {{InstanceKind::Monolith, 1}};
  CHECK_THROWS_AS(sim.apply_scaling(d), ConfigError);
}

TEST_CASE("new instances start after the start delay") {
  const auto p = profile_for("InternVL-26B");
  auto cfg = decoupled(p, {{InstanceKind::Image, 4, 1, 0}, {InstanceKind::Text, 4, 1, 0}}, 2);
  cfg.start_delay_ms = 5000.0;
  Simulator sim(cfg, p);
  sim.run_until(1000.0);
  ScalingDecision d;
  d.targets = {{InstanceKind::Image, 1}, {InstanceKind::Text, 2}};
  sim.apply_scaling(d);
  const auto& added = sim.cluster().instances.back();
  CHECK(added.state == InstanceState::Starting);
  sim.run_until(5999.0);
  CHECK(sim.cluster().instances.back().state == InstanceState::Starting);
  sim.run_until(6000.0);
  CHECK(sim.cluster().instances.back().state == InstanceState::Active);
  sim.check_invariants();
}

TEST_CASE("transfer latency distributions") {
  TransferModel rdma;
  CHECK(rdma.quantile(0.99) == doctest::Approx(5.0).epsilon(0.01));
  TransferModel tcp;
  tcp.medium = TransferMedium::TCP;
  CHECK(tcp.quantile(0.5) == doctest::Approx(100.0));
  CHECK(tcp.quantile(0.99) == doctest::Approx(180.0).epsilon(0.01));

  std::mt19937_64 rng(9);
  std::vector<double> s(200000);
  for (auto& x : s) x = tcp.sample(rng);
  std::sort(s.begin(), s.end());
  CHECK(s[s.size() / 2] == doctest::Approx(100.0).epsilon(0.01));
  CHECK(s[static_cast<std::size_t>(0.99 * s.size())] == doctest::Approx(180.0).epsilon(0.02));
}

TEST_CASE("batch formation") {
  Instance inst;
  inst.max_batch = 2;
  for (std::uint64_t i = 0; i < 5; ++i) {
    WorkItem w;
    w.id = i;
    w.stage = StageKind::Prefill;
    w.tokens = 100;
    w.enqueue_ms = w.order_ms = static_cast<double>(i);
    inst.queue.push_back(w);
  }
  auto done = [](std::uint64_t) { return true; };
  CHECK(form_batch(inst, 10.0, SchedulerKind::FIFO, done) == std::vector<std::size_t>{0, 1});
  inst.max_batch = 1;
  CHECK(form_batch(inst, 10.0, SchedulerKind::FIFO, done).size() == 1);
  inst.queue[0].deps = {99};
  CHECK(form_batch(inst, 10.0, SchedulerKind::FIFO, [](std::uint64_t id) { return id != 99; }) ==
        std::vector<std::size_t>{1});
}

TEST_CASE("unsorted workloads are rejected") {
  const auto p = profile_for("InternVL-26B");
  Simulator sim(decoupled(p, {{InstanceKind::Image, 4, 1, 0}, {InstanceKind::Text, 4, 1, 0}}), p);
  Request a, b;
  a.id = 0;
  a.arrival_ms = 5.0;
  a.text_tokens = 1;
  b.id = 1;
  b.arrival_ms = 1.0;
  b.text_tokens = 1;
  CHECK_THROWS_AS(sim.load({a, b}), std::invalid_argument);
}
