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

#include "mmsim/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mmsim {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const auto n = static_cast<double>(sorted.size());
  auto rank = static_cast<std::size_t>(std::ceil(q * n - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

Percentiles percentiles(std::vector<double> values) {
  Percentiles p;
  if (values.empty()) return p;
  std::sort(values.begin(), values.end());
  p.count = values.size();
  p.mean = std::accumulate(values.begin(), values.end(), 0.0) /
           static_cast<double>(values.size());
  p.p50 = quantile_sorted(values, 0.50);
  p.p90 = quantile_sorted(values, 0.90);
  p.p99 = quantile_sorted(values, 0.99);
  return p;
}

namespace {

Percentiles weighted_percentiles(std::vector<TbtSegment> segs) {
  Percentiles p;
  std::int64_t n = 0;
  double sum = 0.0;
  for (const auto& s : segs) {
    n += s.count;
    sum += s.step_ms * static_cast<double>(s.count);
  }
  if (n == 0) return p;
  std::sort(segs.begin(), segs.end(),
            [](const TbtSegment& a, const TbtSegment& b) { return a.step_ms < b.step_ms; });
  auto at = [&](double q) {
    auto rank = static_cast<std::int64_t>(std::ceil(q * static_cast<double>(n) - 1e-9));
    rank = std::clamp<std::int64_t>(rank, 1, n);
    std::int64_t seen = 0;
    for (const auto& s : segs) {
      seen += s.count;
      if (seen >= rank) return s.step_ms;
    }
    return segs.back().step_ms;
  };
  p.count = static_cast<std::size_t>(n);
  p.mean = sum / static_cast<double>(n);
  p.p50 = at(0.50);
  p.p90 = at(0.90);
  p.p99 = at(0.99);
  return p;
}

const char* modality_key(Modality m) {
  return m == Modality::TextOnly ? "text" : "image";
}

}  // namespace

LatencySummary summarize_latency(const MetricsLog& log, double warmup_fraction,
                                 double window_ms) {
  LatencySummary s;
  const double cutoff = warmup_fraction * log.horizon_ms;
  std::map<std::string, std::vector<double>> ttft;
  std::map<std::string, std::vector<TbtSegment>> tbt;
  std::map<std::size_t, std::vector<double>> per_window;
  for (const auto& r : log.requests) {
    if (r.arrival_ms < cutoff) {
      ++s.warmup_excluded;
      continue;
    }
    if (!r.completed()) {
      ++s.in_flight;
      continue;
    }
    ++s.completed;
    const double t = r.ttft_ms();
    ttft["all"].push_back(t);
    ttft[modality_key(r.modality)].push_back(t);
    auto& all = tbt["all"];
    auto& mine = tbt[modality_key(r.modality)];
    all.insert(all.end(), r.tbt.begin(), r.tbt.end());
    mine.insert(mine.end(), r.tbt.begin(), r.tbt.end());
    if (window_ms > 0.0) {
      per_window[static_cast<std::size_t>(r.arrival_ms / window_ms)].push_back(t);
    }
  }
  s.empty = s.completed == 0;
  for (auto& [k, v] : ttft) s.ttft[k] = percentiles(std::move(v));
  for (auto& [k, v] : tbt) s.tbt[k] = weighted_percentiles(std::move(v));
  for (auto& [w, v] : per_window) s.window_p99_ttft.push_back(quantile(std::move(v), 0.99));
  return s;
}

namespace {

bool meets(const RequestRecord& r, const SLOSpec& slo) {
  return r.completed() && r.ttft_ms() <= slo.ttft_slo_ms(r.modality) &&
         r.tbt_p99_ms() <= slo.tbt_slo_ms();
}

}  // namespace

std::vector<AttainmentWindow> slo_attainment(const MetricsLog& log, const SLOSpec& slo,
                                             double window_ms) {
  if (!(window_ms > 0.0)) throw std::invalid_argument("window_ms must be > 0");
  const double end = std::max(log.horizon_ms, log.end_ms);
  const auto n = static_cast<std::size_t>(std::ceil(end / window_ms - 1e-9));
  std::vector<AttainmentWindow> out(std::max<std::size_t>(n, 1));
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].start_ms = static_cast<double>(i) * window_ms;
    out[i].end_ms = static_cast<double>(i + 1) * window_ms;
  }
  for (const auto& r : log.requests) {
    if (!r.completed()) continue;
    auto w = static_cast<std::size_t>(r.completion_ms / window_ms);
    w = std::min(w, out.size() - 1);
    ++out[w].completed;
    if (meets(r, slo)) ++out[w].met;
  }
  for (auto& w : out) {
    w.vacuous = w.completed == 0;
    w.attainment = w.vacuous ? 1.0
                             : static_cast<double>(w.met) / static_cast<double>(w.completed);
  }
  return out;
}

double overall_attainment(const MetricsLog& log, const SLOSpec& slo,
                          double warmup_fraction) {
  const double cutoff = warmup_fraction * log.horizon_ms;
  std::size_t n = 0, met = 0;
  for (const auto& r : log.requests) {
    if (r.arrival_ms < cutoff) continue;
    ++n;
    if (meets(r, slo)) ++met;
  }
  return n == 0 ? 1.0 : static_cast<double>(met) / static_cast<double>(n);
}

CostSummary cost_summary(const MetricsLog& log, double window_ms) {
  CostSummary c;
  c.gpu_seconds = log.gpu_seconds;
  for (const auto& a : log.allocation) c.peak_gpus = std::max(c.peak_gpus, a.gpus);
  const double h = log.horizon_ms;
  for (double start = 0.0; start < h; start += window_ms) {
    const double end = std::min(h, start + window_ms);
    double gpu_ms = 0.0;
    int at_start = 0;
    for (std::size_t i = 0; i < log.allocation.size(); ++i) {
      const double s = log.allocation[i].time_ms;
      const double e = i + 1 < log.allocation.size() ? log.allocation[i + 1].time_ms : h;
      if (s <= start) at_start = log.allocation[i].gpus;
      const double lo = std::max(start, s), hi = std::min(end, e);
      if (hi > lo) gpu_ms += (hi - lo) * log.allocation[i].gpus;
    }
    c.timeline.emplace_back(start, at_start);
    c.window_gpu_seconds.push_back(gpu_ms / 1000.0);
  }
  return c;
}

Feasibility check_feasibility(const MetricsLog& log, const SLOSpec& slo,
                              double warmup_fraction) {
  const double cutoff = warmup_fraction * log.horizon_ms;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> text, image, tbt;
  for (const auto& r : log.requests) {
    if (r.arrival_ms < cutoff) continue;
    const double t = r.has_first_token() ? r.ttft_ms() : inf;
    (r.modality == Modality::TextOnly ? text : image).push_back(t);
    tbt.push_back(r.completed() ? r.tbt_p99_ms() : inf);
  }
  Feasibility f;
  f.p99_ttft_text_ms = text.empty() ? 0.0 : quantile(text, slo.percentile);
  f.p99_ttft_image_ms = image.empty() ? 0.0 : quantile(image, slo.percentile);
  f.p99_tbt_ms = tbt.empty() ? 0.0 : quantile(tbt, slo.percentile);
  f.feasible = f.p99_ttft_text_ms <= slo.ttft_slo_ms(Modality::TextOnly) &&
               f.p99_ttft_image_ms <= slo.ttft_slo_ms(Modality::ImageText) &&
               f.p99_tbt_ms <= slo.tbt_slo_ms();
  return f;
}

ThroughputResult max_throughput(
    const std::function<ThroughputProbe(double load_scale)>& probe,
    const ThroughputSearch& search) {
  ThroughputResult out;
  auto run = [&](double scale) {
    ThroughputProbe p = probe(scale);
    p.load_scale = scale;
    out.probes.push_back(p);
    return p;
  };
  double lo = 0.0, hi = 0.0;
  ThroughputProbe best;
  ThroughputProbe p = run(search.initial_scale);
  if (p.feasible) {
    lo = search.initial_scale;
    best = p;
    hi = lo;
    while (true) {
      hi *= 2.0;
      if (hi > search.max_scale) {
        out.rate = best.rate;
        out.load_scale = best.load_scale;
        return out;
      }
      ThroughputProbe q = run(hi);
      if (!q.feasible) break;
      lo = hi;
      best = q;
    }
  } else {
    hi = search.initial_scale;
    lo = hi;
    while (true) {
      lo /= 2.0;
      if (lo < search.min_scale) {
        out.infeasible = true;
        return out;
      }
      ThroughputProbe q = run(lo);
      if (q.feasible) {
        best = q;
        break;
      }
      hi = lo;
    }
  }
  while ((hi - lo) / lo > search.tolerance) {
    const double mid = 0.5 * (lo + hi);
    ThroughputProbe q = run(mid);
    if (q.feasible) {
      lo = mid;
      best = q;
    } else {
      hi = mid;
    }
  }
  out.rate = best.rate;
  out.load_scale = best.load_scale;
  return out;
}

nlohmann::json to_json(const Percentiles& p) {
  return {{"count", p.count}, {"mean", p.mean}, {"p50", p.p50}, {"p90", p.p90}, {"p99", p.p99}};
}

nlohmann::json to_json(const LatencySummary& s) {
  nlohmann::json j;
  j["empty"] = s.empty;
  j["completed"] = s.completed;
  j["in_flight"] = s.in_flight;
  j["warmup_excluded"] = s.warmup_excluded;
  nlohmann::json t = nlohmann::json::object(), b = nlohmann::json::object();
  for (const auto& [k, p] : s.ttft) t[k] = to_json(p);
  for (const auto& [k, p] : s.tbt) b[k] = to_json(p);
  j["ttft_ms"] = t;
  j["tbt_ms"] = b;
  j["window_p99_ttft_ms"] = s.window_p99_ttft;
  return j;
}

nlohmann::json to_json(const CostSummary& c) {
  nlohmann::json j;
  j["gpu_seconds"] = c.gpu_seconds;
  j["peak_gpus"] = c.peak_gpus;
  auto tl = nlohmann::json::array();
  for (std::size_t i = 0; i < c.timeline.size(); ++i) {
    tl.push_back({{"start_ms", c.timeline[i].first},
                  {"gpus", c.timeline[i].second},
                  {"gpu_seconds", c.window_gpu_seconds[i]}});
  }
  j["timeline"] = tl;
  return j;
}

}  // namespace mmsim
