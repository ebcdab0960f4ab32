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

#include "mmsim/workload.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

namespace mmsim {

namespace {

constexpr const char* kTraceHeader =
    "arrival_ms,service_id,text_tokens,num_images,image_dims,output_tokens";

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = s.data() + s.size();
  auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc() && p == e;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

double sample_lognormal(std::mt19937_64& rng, const LogNormalSpec& s) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double v = s.median * std::exp(s.sigma * z(rng));
  return std::clamp(v, s.min, s.max);
}

// Inverse-CDF sample of p(x) ~ x^-alpha for x >= x_min.
double sample_power_law(std::mt19937_64& rng, double alpha, double x_min) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return x_min * std::pow(1.0 - u(rng), -1.0 / (alpha - 1.0));
}

struct RateSegment {
  double start_ms;
  double end_ms;
  double rate_per_ms;
};

std::vector<RateSegment> rate_segments(const GeneratorConfig& c,
                                       double horizon_ms, double scale) {
  std::vector<double> cuts{0.0, horizon_ms};
  for (const auto& e : c.burst_episodes) {
    cuts.push_back(std::clamp(e.start_ms, 0.0, horizon_ms));
    cuts.push_back(std::clamp(e.start_ms + e.duration_ms, 0.0, horizon_ms));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  std::vector<RateSegment> segs;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double mid = 0.5 * (cuts[i] + cuts[i + 1]);
    segs.push_back({cuts[i], cuts[i + 1],
                    c.base_rate * scale * burst_rate_multiplier(c, mid) / 1000.0});
  }
  return segs;
}

const BurstEpisode* active_episode(const GeneratorConfig& c, double t_ms) {
  const BurstEpisode* hit = nullptr;
  for (const auto& e : c.burst_episodes) {
    if (t_ms >= e.start_ms && t_ms < e.start_ms + e.duration_ms) hit = &e;
  }
  return hit;
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

double quantile_of(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * v.size()));
  return v[std::max<std::size_t>(rank, 1) - 1];
}

}  // namespace

bool parse_trace_row(const std::string& raw, TraceRecord& out) {
  std::string line = raw;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto f = split(line, ',');
  if (f.size() != 6) return false;
  TraceRecord r;
  int num_images = 0;
  if (!parse_double(f[0], r.arrival_ms) || r.arrival_ms < 0.0) return false;
  r.service_id = f[1];
  if (!parse_number(f[2], r.text_tokens) || r.text_tokens < 0) return false;
  if (!parse_number(f[3], num_images) || num_images < 0 ||
      num_images > kMaxImagesPerRequest) {
    return false;
  }
  if (!f[4].empty()) {
    for (const auto& dim : split(f[4], ';')) {
      const auto x = dim.find('x');
      if (x == std::string::npos) return false;
      int w = 0, h = 0;
      if (!parse_number(dim.substr(0, x), w) ||
          !parse_number(dim.substr(x + 1), h) || w < 1 || h < 1) {
        return false;
      }
      r.image_dims.emplace_back(w, h);
    }
  }
  if (static_cast<int>(r.image_dims.size()) != num_images) return false;
  if (!parse_number(f[5], r.output_tokens) || r.output_tokens < 1) return false;
  if (r.text_tokens == 0 && num_images == 0) return false;
  out = std::move(r);
  return true;
}

TraceLoadResult load_trace(const std::filesystem::path& path,
                           const ModelSpec& model) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read trace file " + path.string());
  TraceLoadResult res;
  std::vector<TraceRecord> records;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first) {
      first = false;
      if (line.rfind("arrival_ms", 0) == 0) continue;
    }
    if (line.empty() || line == "\r") continue;
    ++res.rows;
    TraceRecord rec;
    if (parse_trace_row(line, rec)) {
      records.push_back(std::move(rec));
    } else {
      ++res.malformed;
    }
  }
  if (res.malformed * 100 > res.rows) {
    throw ConfigError(path.string() + ": " + std::to_string(res.malformed) +
                      " of " + std::to_string(res.rows) +
                      " rows malformed (limit 1%)");
  }
  std::stable_sort(records.begin(), records.end(),
                   [](const TraceRecord& a, const TraceRecord& b) {
                     return a.arrival_ms < b.arrival_ms;
                   });
  res.requests.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    Request r;
    r.id = i;
    r.arrival_ms = records[i].arrival_ms;
    r.service_id = records[i].service_id;
    r.text_tokens = records[i].text_tokens;
    r.output_tokens = records[i].output_tokens;
    for (auto [w, h] : records[i].image_dims) r.images.push_back(make_image(w, h, model));
    res.requests.push_back(std::move(r));
  }
  return res;
}

void write_trace(const std::filesystem::path& path,
                 const std::vector<Request>& requests) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << kTraceHeader << '\n';
  out << std::setprecision(17);
  for (const auto& r : requests) {
    out << r.arrival_ms << ',' << r.service_id << ',' << r.text_tokens << ','
        << r.images.size() << ',';
    for (std::size_t i = 0; i < r.images.size(); ++i) {
      if (i) out << ';';
      out << r.images[i].width_px << 'x' << r.images[i].height_px;
    }
    out << ',' << r.output_tokens << '\n';
  }
}

std::vector<double> GeneratorConfig::default_images_per_request() {
  std::vector<double> w;
  for (int n = 1; n <= kMaxImagesPerRequest; ++n) w.push_back(std::pow(n, -2.2));
  return w;
}

void GeneratorConfig::validate() const {
  if (!(base_rate > 0.0)) throw ConfigError("generator.base_rate must be > 0");
  if (!(text_len_alpha > 1.0) || !(image_req_len_alpha > 1.0)) {
    throw ConfigError("generator: power-law exponents must be > 1");
  }
  if (image_request_fraction < 0.0 || image_request_fraction > 1.0) {
    throw ConfigError("generator.image_request_fraction must be in [0, 1]");
  }
  if (!images_per_request.empty()) {
    if (images_per_request.size() > kMaxImagesPerRequest) {
      throw ConfigError("generator.images_per_request covers at most 16 images");
    }
    double s = 0.0;
    for (double w : images_per_request) {
      if (w < 0.0) throw ConfigError("generator.images_per_request: negative weight");
      s += w;
    }
    if (s <= 0.0) throw ConfigError("generator.images_per_request: zero mass");
  }
  for (const auto& e : burst_episodes) {
    if (e.duration_ms < 0.0 || e.rate_multiplier < 0.0 ||
        e.image_multiplier < 0.0) {
      throw ConfigError("generator.burst_episodes: negative field");
    }
  }
  if (services.empty()) throw ConfigError("generator.services must not be empty");
}

double burst_rate_multiplier(const GeneratorConfig& config, double t_ms) {
  double m = 1.0;
  for (const auto& e : config.burst_episodes) {
    if (t_ms >= e.start_ms && t_ms < e.start_ms + e.duration_ms) {
      m *= e.rate_multiplier;
    }
  }
  return m;
}

std::vector<Request> generate(const GeneratorConfig& config, double horizon_ms,
                              const ModelSpec& model, double load_scale) {
  config.validate();
  if (!(horizon_ms > 0.0)) throw std::invalid_argument("horizon must be > 0");
  const auto weights = config.images_per_request.empty()
                           ? GeneratorConfig::default_images_per_request()
                           : config.images_per_request;
  std::discrete_distribution<int> count_dist(weights.begin(), weights.end());

  // Time-change of a unit-rate Poisson process through the cumulative rate.
  const auto segs = rate_segments(config, horizon_ms, load_scale);
  std::mt19937_64 arrivals(splitmix64(config.seed ^ 0xa5a5a5a5ULL));
  std::exponential_distribution<double> unit(1.0);

  std::vector<Request> out;
  double budget = unit(arrivals);
  std::size_t seg = 0;
  double seg_used = 0.0;  // integrated rate already consumed in `seg`
  while (seg < segs.size()) {
    const auto& s = segs[seg];
    const double mass = (s.end_ms - s.start_ms) * s.rate_per_ms - seg_used;
    if (s.rate_per_ms <= 0.0 || budget > mass) {
      budget -= std::max(mass, 0.0);
      ++seg;
      seg_used = 0.0;
      continue;
    }
    seg_used += budget;
    const double t = s.start_ms + seg_used / s.rate_per_ms;
    budget = unit(arrivals);

    const std::uint64_t idx = out.size();
    std::mt19937_64 rng(splitmix64(config.seed * 0x100000001b3ULL + idx));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const BurstEpisode* ep = active_episode(config, t);
    const double frac = ep && ep->image_fraction >= 0.0
                            ? ep->image_fraction
                            : config.image_request_fraction;
    Request r;
    r.id = idx;
    r.arrival_ms = t;
    r.service_id = config.services[rng() % config.services.size()];
    const bool image_req = u01(rng) < frac;
    const double len =
        image_req
            ? sample_power_law(rng, config.image_req_len_alpha,
                               config.image_text_len_min)
            : sample_power_law(rng, config.text_len_alpha, config.text_len_min);
    r.text_tokens = static_cast<std::int64_t>(std::llround(
        std::clamp(len, config.len_lower_bound, config.len_upper_bound)));
    r.output_tokens = std::max<std::int64_t>(
        1, std::llround(sample_lognormal(rng, config.output_len)));
    if (image_req) {
      int n = count_dist(rng) + 1;
      if (ep) {
        n = static_cast<int>(std::lround(n * ep->image_multiplier));
      }
      n = std::clamp(n, 1, kMaxImagesPerRequest);
      std::normal_distribution<double> z(0.0, 1.0);
      for (int k = 0; k < n; ++k) {
        const double w = sample_lognormal(rng, config.image_dim);
        const double h = std::clamp(w * std::exp(config.aspect_sigma * z(rng)),
                                    config.image_dim.min, config.image_dim.max);
        r.images.push_back(make_image(static_cast<int>(std::lround(w)),
                                      static_cast<int>(std::lround(h)), model));
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

WorkloadSummary summarize(const std::vector<Request>& stream, double window_ms) {
  WorkloadSummary s;
  if (stream.empty()) return s;
  s.empty = false;
  s.requests = stream.size();
  double t0 = stream.front().arrival_ms, t1 = t0;
  std::vector<double> prompts, images;
  std::map<std::string, std::vector<double>> svc_images;
  double text_tok = 0.0, image_tok = 0.0;
  for (const auto& r : stream) {
    t0 = std::min(t0, r.arrival_ms);
    t1 = std::max(t1, r.arrival_ms);
    const TokenTotals tot = request_totals(r);
    prompts.push_back(static_cast<double>(tot.total));
    text_tok += static_cast<double>(tot.text);
    image_tok += static_cast<double>(tot.image);
    auto& svc = s.per_service[r.service_id];
    ++svc.requests;
    if (!r.images.empty()) {
      ++s.image_requests;
      ++svc.image_requests;
      images.push_back(static_cast<double>(r.images.size()));
      svc_images[r.service_id].push_back(static_cast<double>(r.images.size()));
    }
  }
  s.duration_s = std::max((t1 - t0) / 1000.0, window_ms / 1000.0);
  s.median_prompt_tokens = median_of(prompts);
  s.p95_prompt_tokens = quantile_of(prompts, 0.95);
  s.median_images_per_request = median_of(images);
  s.p95_images_per_request = quantile_of(images, 0.95);
  for (auto& [name, v] : svc_images) {
    s.per_service[name].median_images_per_request = median_of(v);
  }
  s.mean_request_rate = static_cast<double>(stream.size()) / s.duration_s;
  s.mean_text_token_rate = text_tok / s.duration_s;
  s.mean_image_token_rate = image_tok / s.duration_s;

  const auto windows = static_cast<std::size_t>(
      std::max(1.0, std::ceil((t1 - t0 + 1e-9) / window_ms)));
  std::vector<double> img_count(windows, 0.0), img_prompt(windows, 0.0),
      txt_prompt(windows, 0.0);
  double total_images = 0.0;
  for (const auto& r : stream) {
    const auto w = std::min(
        windows - 1, static_cast<std::size_t>((r.arrival_ms - t0) / window_ms));
    const TokenTotals tot = request_totals(r);
    if (r.images.empty()) {
      txt_prompt[w] += static_cast<double>(tot.total);
    } else {
      img_count[w] += static_cast<double>(r.images.size());
      img_prompt[w] += static_cast<double>(tot.total);
      total_images += static_cast<double>(r.images.size());
    }
  }
  std::vector<double> qps;
  for (std::size_t w = 0; w < windows; ++w) {
    qps.push_back(img_count[w] / (window_ms / 1000.0));
    if (txt_prompt[w] > 0.0) {
      s.peak_image_to_text_token_rate =
          std::max(s.peak_image_to_text_token_rate, img_prompt[w] / txt_prompt[w]);
    }
  }
  s.median_image_qps = median_of(qps);
  s.mean_image_qps = total_images / s.duration_s;
  return s;
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  nlohmann::json eps = nlohmann::json::array();
  for (const auto& e : c.burst_episodes) {
    eps.push_back({{"start_ms", e.start_ms},
                   {"duration_ms", e.duration_ms},
                   {"rate_multiplier", e.rate_multiplier},
                   {"image_multiplier", e.image_multiplier},
                   {"image_fraction", e.image_fraction}});
  }
  auto ln = [](const LogNormalSpec& s) {
    return nlohmann::json{{"median", s.median}, {"sigma", s.sigma},
                          {"min", s.min}, {"max", s.max}};
  };
  j = nlohmann::json{{"base_rate", c.base_rate},
                     {"burst_episodes", eps},
                     {"text_len_alpha", c.text_len_alpha},
                     {"image_req_len_alpha", c.image_req_len_alpha},
                     {"text_len_min", c.text_len_min},
                     {"image_text_len_min", c.image_text_len_min},
                     {"len_lower_bound", c.len_lower_bound},
                     {"len_upper_bound", c.len_upper_bound},
                     {"images_per_request", c.images_per_request},
                     {"image_request_fraction", c.image_request_fraction},
                     {"image_dim", ln(c.image_dim)},
                     {"aspect_sigma", c.aspect_sigma},
                     {"output_len", ln(c.output_len)},
                     {"services", c.services},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  GeneratorConfig d;
  c = d;
  c.base_rate = j.value("base_rate", d.base_rate);
  if (j.contains("burst_episodes")) {
    for (const auto& e : j.at("burst_episodes")) {
      BurstEpisode b;
      b.start_ms = e.at("start_ms").get<double>();
      b.duration_ms = e.at("duration_ms").get<double>();
      b.rate_multiplier = e.value("rate_multiplier", 1.0);
      b.image_multiplier = e.value("image_multiplier", 1.0);
      b.image_fraction = e.value("image_fraction", -1.0);
      c.burst_episodes.push_back(b);
    }
  }
  auto ln = [](const nlohmann::json& s, LogNormalSpec dflt) {
    dflt.median = s.value("median", dflt.median);
    dflt.sigma = s.value("sigma", dflt.sigma);
    dflt.min = s.value("min", dflt.min);
    dflt.max = s.value("max", dflt.max);
    return dflt;
  };
  c.text_len_alpha = j.value("text_len_alpha", d.text_len_alpha);
  c.image_req_len_alpha = j.value("image_req_len_alpha", d.image_req_len_alpha);
  c.text_len_min = j.value("text_len_min", d.text_len_min);
  c.image_text_len_min = j.value("image_text_len_min", d.image_text_len_min);
  c.len_lower_bound = j.value("len_lower_bound", d.len_lower_bound);
  c.len_upper_bound = j.value("len_upper_bound", d.len_upper_bound);
  c.images_per_request = j.value("images_per_request", d.images_per_request);
  c.image_request_fraction =
      j.value("image_request_fraction", d.image_request_fraction);
  if (j.contains("image_dim")) c.image_dim = ln(j.at("image_dim"), d.image_dim);
  c.aspect_sigma = j.value("aspect_sigma", d.aspect_sigma);
  if (j.contains("output_len")) c.output_len = ln(j.at("output_len"), d.output_len);
  c.services = j.value("services", d.services);
  c.seed = j.value("seed", d.seed);
}

}  // namespace mmsim
