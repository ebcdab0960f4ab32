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
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace mmsim {

// Raised for invalid user-supplied configuration (model specs, experiment
// files, unsupported TP degrees). The CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Architecture { DecOnly, CroAttn };

enum class StageKind { Preprocess, Encode, Prefill, Decode, Transfer };

enum class Modality { TextOnly, ImageText };

std::string_view to_string(Architecture a);
std::string_view to_string(StageKind s);
std::string_view to_string(Modality m);
Architecture parse_architecture(std::string_view s);
StageKind parse_stage(std::string_view s);

struct ModelSpec {
  std::string name;
  Architecture architecture = Architecture::DecOnly;
  int tile_edge_px = 448;
  int tokens_per_tile = 256;
  int max_tiles_per_image = 1;
  // Adds one global thumbnail tile whenever an image spans more than one
  // grid tile (InternVL / NVLM / LLaVA-OV style).
  bool thumbnail_tile = false;
  double encoder_params_b = 0.0;
  double llm_params_b = 0.0;
  int default_tp_text = 1;
  std::vector<int> supported_tp_encoder{1};
  std::vector<int> supported_tp_text{1, 2, 4, 8};

  void validate() const;
  bool supports_encoder_tp(int tp) const;
};

struct ImageSpec {
  int width_px = 0;
  int height_px = 0;
  int tiles = 0;
  std::int64_t image_tokens = 0;
};

int image_tiles(int width_px, int height_px, const ModelSpec& model);
std::int64_t image_tokens(int width_px, int height_px, const ModelSpec& model);
ImageSpec make_image(int width_px, int height_px, const ModelSpec& model);

struct Request {
  std::uint64_t id = 0;
  double arrival_ms = 0.0;
  std::int64_t text_tokens = 0;
  std::vector<ImageSpec> images;
  std::int64_t output_tokens = 1;
  std::string service_id;

  Modality modality() const {
    return images.empty() ? Modality::TextOnly : Modality::ImageText;
  }
  int total_tiles() const;
};

struct TokenTotals {
  std::int64_t text = 0;
  std::int64_t image = 0;
  std::int64_t total = 0;
};

TokenTotals request_totals(const Request& r);

// Throws std::invalid_argument when the request violates its invariants.
void validate_request(const Request& r);

// TTFT/TBT objectives. Bases are isolated single-request latencies on the
// monolithic baseline; the factor scales them into the enforced objective.
struct SLOSpec {
  double ttft_base_text_ms = 0.0;
  double ttft_base_image_ms = 0.0;
  double tbt_base_ms = 0.0;
  double slo_factor = 5.0;
  double percentile = 0.99;

  double ttft_slo_ms(Modality m) const {
    return (m == Modality::TextOnly ? ttft_base_text_ms : ttft_base_image_ms) *
           slo_factor;
  }
  double tbt_slo_ms() const { return tbt_base_ms * slo_factor; }
  void validate() const;
};

const std::vector<ModelSpec>& model_presets();
// Throws ConfigError for unknown names.
const ModelSpec& model_preset(std::string_view name);

void to_json(nlohmann::json& j, const ModelSpec& m);
void from_json(const nlohmann::json& j, ModelSpec& m);

// Reads a JSON file holding either one model object or an array of them.
std::vector<ModelSpec> load_model_specs(const std::filesystem::path& path);

}  // namespace mmsim
