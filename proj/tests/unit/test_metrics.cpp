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
#include <random>
#include <stdexcept>

#include "mmsim/metrics.hpp"

using namespace mmsim;

namespace {

RequestRecord finished(double arrival, double ttft, Modality m = Modality::TextOnly,
                       double tbt = 10.0, std::int64_t out = 3) {
  RequestRecord r;
  r.arrival_ms = arrival;
  r.modality = m;
  r.prefill_start_ms = arrival;
  r.prefill_end_ms = arrival + ttft;
  r.decode_start_ms = r.prefill_end_ms;
  r.output_tokens = out;
  r.tbt = {{tbt, out - 1}};
  r.completion_ms = r.prefill_end_ms + tbt * static_cast<double>(out - 1);
  return r;
}

MetricsLog log_of(std::vector<RequestRecord> recs, double horizon = 1000.0) {
  MetricsLog log;
  for (std::size_t i = 0; i < recs.size(); ++i) recs[i].id = i;
  log.requests = std::move(recs);
  log.horizon_ms = horizon;
  log.arrived = log.requests.size();
  for (const auto& r : log.requests) log.completed += r.completed() ? 1 : 0;
  log.in_flight = log.arrived - log.completed;
  return log;
}

const SLOSpec kSlo{100.0, 400.0, 10.0, 2.0, 0.99};  // 200 / 800 / 20 ms

}  // namespace

TEST_CASE("nearest-rank quantile") {
  CHECK(quantile({100.0, 200.0}, 0.5) == 100.0);
  CHECK(quantile({5.0}, 0.99) == 5.0);
  CHECK(quantile({3.0, 1.0, 2.0}, 1.0) == 3.0);
  CHECK_THROWS_AS(quantile({}, 0.5), std::invalid_argument);

  std::mt19937_64 rng(1);
  std::exponential_distribution<double> e(0.01);
  for (int n : {1, 2, 7, 99, 100, 101, 1000, 4321}) {
    std::vector<double> v(static_cast<std::size_t>(n));
    for (auto& x : v) x = e(rng);
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    for (double q : {0.01, 0.5, 0.9, 0.99, 1.0}) {
      const auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-12));
      CHECK(quantile(v, q) == s[std::max<std::size_t>(rank, 1) - 1]);
      CHECK(quantile_sorted(s, q) == quantile(v, q));
    }
  }
}

TEST_CASE("percentile summary") {
  const auto p = percentiles({1.0, 2.0, 3.0, 4.0});
  CHECK(p.count == 4);
  CHECK(p.mean == doctest::Approx(2.5));
  CHECK(p.p50 == 2.0);
  CHECK(p.p99 == 4.0);
}

TEST_CASE("latency summary of a single request") {
  const auto s = summarize_latency(log_of({finished(0.0, 42.0)}), 0.0);
  CHECK_FALSE(s.empty);
  const auto& t = s.ttft.at("all");
  CHECK(t.mean == 42.0);
  CHECK(t.p50 == 42.0);
  CHECK(t.p90 == 42.0);
  CHECK(t.p99 == 42.0);
}

TEST_CASE("latency summary splits modalities and skips warm-up") {
  auto log = log_of({finished(10.0, 999.0), finished(200.0, 100.0),
                     finished(300.0, 200.0, Modality::ImageText), finished(400.0, 300.0)});
  const auto s = summarize_latency(log, 0.1);
  CHECK(s.warmup_excluded == 1);
  CHECK(s.ttft.at("all").count == 3);
  CHECK(s.ttft.at("text").p50 == 100.0);
  CHECK(s.ttft.at("image").mean == 200.0);
  CHECK(s.tbt.at("all").p99 == 10.0);
  CHECK(summarize_latency(log_of({}), 0.1).empty);
}

TEST_CASE("SLO attainment counts requests meeting both objectives") {
  std::vector<RequestRecord> half, twice, mixed;
  for (int i = 0; i < 4; ++i) {
    half.push_back(finished(i * 10.0, 100.0, Modality::TextOnly, 10.0));
    twice.push_back(finished(i * 10.0, 400.0, Modality::TextOnly, 10.0));
  }
  mixed = half;
  mixed[3] = finished(30.0, 100.0, Modality::TextOnly, 50.0);  // TBT miss
  auto att = [](std::vector<RequestRecord> r) {
    auto w = slo_attainment(log_of(std::move(r)), kSlo, 10000.0);
    REQUIRE(!w.empty());
    return w[0].attainment;
  };
  CHECK(att(half) == 1.0);
  CHECK(att(twice) == 0.0);
  CHECK(att(mixed) == doctest::Approx(0.75));

  const auto empty = slo_attainment(log_of({}), kSlo, 500.0);
  for (const auto& w : empty) {
    CHECK(w.vacuous);
    CHECK(w.attainment == 1.0);
  }
}

TEST_CASE("unfinished requests count against attainment and feasibility") {
  std::vector<RequestRecord> recs;
  for (int i = 0; i < 99; ++i) recs.push_back(finished(100.0 + i, 50.0));
  RequestRecord stuck;
  stuck.arrival_ms = 500.0;
  recs.push_back(stuck);
  recs.push_back(stuck);
  const auto log = log_of(recs);
  CHECK(overall_attainment(log, kSlo, 0.0) == doctest::Approx(99.0 / 101.0));
  CHECK_FALSE(check_feasibility(log, kSlo, 0.0).feasible);
  // One unfinished request in a hundred sits above the nearest-rank P99.
  recs.pop_back();
  CHECK(check_feasibility(log_of(recs), kSlo, 0.0).feasible);
}

TEST_CASE("feasibility checks each modality's P99 against its own objective") {
  std::vector<RequestRecord> recs;
  for (int i = 0; i < 50; ++i) recs.push_back(finished(100.0 + i, 150.0));
  for (int i = 0; i < 50; ++i) recs.push_back(finished(200.0 + i, 700.0, Modality::ImageText));
  auto f = check_feasibility(log_of(recs), kSlo, 0.0);
  CHECK(f.feasible);
  CHECK(f.p99_ttft_text_ms == 150.0);
  CHECK(f.p99_ttft_image_ms == 700.0);
  recs[0] = finished(100.0, 250.0);
  CHECK_FALSE(check_feasibility(log_of(recs), kSlo, 0.0).feasible);
}

TEST_CASE("cost summary integrates the allocation") {
  MetricsLog log = log_of({});
  log.horizon_ms = 10000.0;
  log.allocation = {{0.0, 8}, {4000.0, 16}, {6000.0, 4}};
  log.gpu_seconds = (4.0 * 8 + 2.0 * 16 + 4.0 * 4);
  const auto c = cost_summary(log, 5000.0);
  CHECK(c.gpu_seconds == doctest::Approx(80.0));
  CHECK(c.peak_gpus == 16);
  REQUIRE(c.window_gpu_seconds.size() == 2);
  CHECK(c.window_gpu_seconds[0] == doctest::Approx(4.0 * 8 + 1.0 * 16));
  CHECK(c.window_gpu_seconds[1] == doctest::Approx(1.0 * 16 + 4.0 * 4));
}

TEST_CASE("throughput bisection agrees with a grid scan") {
  for (double knee : {0.02, 0.7, 1.0, 3.3, 17.0, 555.0}) {
    CAPTURE(knee);
    auto probe = [&](double s) { return ThroughputProbe{s, 2.0 * s, s <= knee}; };
    const auto r = max_throughput(probe);
    // Largest feasible rate on a fine grid.
    double scan = 0.0;
    for (double s = 1.0 / 64.0; s <= 1024.0; s *= 1.001) {
      if (probe(s).feasible) scan = probe(s).rate;
    }
    CHECK_FALSE(r.infeasible);
    CHECK(r.rate <= 2.0 * knee);
    CHECK(r.rate == doctest::Approx(scan).epsilon(0.021));
  }
  const auto below = max_throughput([](double s) { return ThroughputProbe{s, s, s <= 0.01}; });
  CHECK(below.infeasible);
  const auto none = max_throughput([](double s) { return ThroughputProbe{s, s, false}; });
  CHECK(none.infeasible);
  CHECK(none.rate == 0.0);
}
