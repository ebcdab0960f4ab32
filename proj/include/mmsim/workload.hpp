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
#include <map>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/model.hpp"

namespace mmsim {

// One row of the replay trace:
// arrival_ms,service_id,text_tokens,num_images,image_dims,output_tokens
// with image_dims a semicolon-separated list of WxH.
struct TraceRecord {
  double arrival_ms = 0.0;
  std::string service_id;
  std::int64_t text_tokens = 0;
  std::vector<std::pair<int, int>> image_dims;
  std::int64_t output_tokens = 1;
};

struct TraceLoadResult {
  std::vector<Request> requests;  // sorted by arrival, ids assigned in order
  std::size_t rows = 0;
  std::size_t malformed = 0;
};

// Parses one data row; returns false for malformed rows.
bool parse_trace_row(const std::string& line, TraceRecord& out);

// Throws ConfigError for unreadable files or when more than 1% of the rows
// are malformed.
TraceLoadResult load_trace(const std::filesystem::path& path,
                           const ModelSpec& model);
void write_trace(const std::filesystem::path& path,
                 const std::vector<Request>& requests);

struct BurstEpisode {
  double start_ms = 0.0;
  double duration_ms = 0.0;
  double rate_multiplier = 1.0;
  double image_multiplier = 1.0;
  // Overrides the image-request fraction inside the episode when >= 0.
  double image_fraction = -1.0;
};

struct LogNormalSpec {
  double median = 1.0;
  double sigma = 0.5;
  double min = 1.0;
  double max = 1e9;
};

struct GeneratorConfig {
  double base_rate = 1.0;  // requests/sec
  std::vector<BurstEpisode> burst_episodes;
  double text_len_alpha = 2.9;       // text-only prompts
  double image_req_len_alpha = 4.4;  // text part of image-text prompts
  double text_len_min = 16.0;        // power-law scale (x_min), tokens
  double image_text_len_min = 16.0;
  double len_lower_bound = 16.0;
  double len_upper_bound = 32768.0;
  // Weights for 1..16 images on an image-text request.
  std::vector<double> images_per_request;
  double image_request_fraction = 0.5;
  LogNormalSpec image_dim{500.0, 0.5, 32.0, 4096.0};
  double aspect_sigma = 0.25;
  LogNormalSpec output_len{100.0, 0.6, 1.0, 2048.0};
  std::vector<std::string> services{"svc-0"};
  std::uint64_t seed = 1;

  void validate() const;
  // Default images-per-request weights: heavy-tailed over 1..16.
  static std::vector<double> default_images_per_request();
};

constexpr int kMaxImagesPerRequest = 16;

// Deterministic given `config.seed`. Arrivals are a Poisson process whose
// rate is base_rate * load_scale * (active burst multipliers); request sizes
// come from an independent stream so that, for a fixed seed, raising
// `load_scale` only compresses arrival times.
std::vector<Request> generate(const GeneratorConfig& config, double horizon_ms,
                              const ModelSpec& model, double load_scale = 1.0);

// Instantaneous arrival-rate multiplier at `t_ms`.
double burst_rate_multiplier(const GeneratorConfig& config, double t_ms);

struct WorkloadSummary {
  bool empty = true;
  std::size_t requests = 0;
  std::size_t image_requests = 0;
  double duration_s = 0.0;
  double median_prompt_tokens = 0.0;
  double p95_prompt_tokens = 0.0;
  double median_images_per_request = 0.0;  // over image-text requests
  double p95_images_per_request = 0.0;
  double median_image_qps = 0.0;  // images/sec, median over windows
  double mean_image_qps = 0.0;
  double mean_request_rate = 0.0;
  double mean_text_token_rate = 0.0;   // tokens/sec
  double mean_image_token_rate = 0.0;  // tokens/sec
  // Max over windows of image-text prompt tokens/s over text-only tokens/s.
  double peak_image_to_text_token_rate = 0.0;
  struct ServiceStats {
    std::size_t requests = 0;
    std::size_t image_requests = 0;
    double median_images_per_request = 0.0;
  };
  std::map<std::string, ServiceStats> per_service;
};

WorkloadSummary summarize(const std::vector<Request>& stream,
                          double window_ms = 60000.0);

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);

}  // namespace mmsim
