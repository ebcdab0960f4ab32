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

#include "mmsim/model.hpp"

#include <algorithm>
#include <fstream>

namespace mmsim {

namespace {

int ceil_div(int a, int b) { return (a + b - 1) / b; }

ModelSpec preset(std::string name, Architecture arch, int tile, int tok,
                 int cap, bool thumb, double enc_b, double llm_b, int tp,
                 std::vector<int> enc_tps) {
  ModelSpec m;
  m.name = std::move(name);
  m.architecture = arch;
  m.tile_edge_px = tile;
  m.tokens_per_tile = tok;
  m.max_tiles_per_image = cap;
  m.thumbnail_tile = thumb;
  m.encoder_params_b = enc_b;
  m.llm_params_b = llm_b;
  m.default_tp_text = tp;
  m.supported_tp_encoder = std::move(enc_tps);
  // 70B-class backends do not fit below four GPUs.
  if (llm_b >= 60.0) m.supported_tp_text = {4, 8};
  return m;
}

}  // namespace

std::string_view to_string(Architecture a) {
  return a == Architecture::DecOnly ? "DecOnly" : "CroAttn";
}

std::string_view to_string(StageKind s) {
  switch (s) {
    case StageKind::Preprocess: return "Preprocess";
    case StageKind::Encode: return "Encode";
    case StageKind::Prefill: return "Prefill";
    case StageKind::Decode: return "Decode";
    case StageKind::Transfer: return "Transfer";
  }
  return "?";
}

std::string_view to_string(Modality m) {
  return m == Modality::TextOnly ? "text" : "image";
}

Architecture parse_architecture(std::string_view s) {
  if (s == "DecOnly") return Architecture::DecOnly;
  if (s == "CroAttn") return Architecture::CroAttn;
  throw ConfigError("unknown architecture '" + std::string(s) + "'");
}

StageKind parse_stage(std::string_view s) {
  for (auto k : {StageKind::Preprocess, StageKind::Encode, StageKind::Prefill,
                 StageKind::Decode, StageKind::Transfer}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

void ModelSpec::validate() const {
  if (name.empty()) throw ConfigError("model spec: empty name");
  if (tile_edge_px < 1 || tokens_per_tile < 1 || max_tiles_per_image < 1) {
    throw ConfigError("model spec '" + name +
                      "': tile_edge_px, tokens_per_tile and "
                      "max_tiles_per_image must be >= 1");
  }
  if (default_tp_text < 1) {
    throw ConfigError("model spec '" + name + "': default_tp_text must be >= 1");
  }
  if (supported_tp_encoder.empty() || supported_tp_text.empty()) {
    throw ConfigError("model spec '" + name + "': empty supported TP set");
  }
  for (int tp : supported_tp_encoder) {
    if (tp < 1) throw ConfigError("model spec '" + name + "': TP must be >= 1");
  }
}

bool ModelSpec::supports_encoder_tp(int tp) const {
  return std::find(supported_tp_encoder.begin(), supported_tp_encoder.end(),
                   tp) != supported_tp_encoder.end();
}

int image_tiles(int width_px, int height_px, const ModelSpec& model) {
  const int w = std::max(width_px, 1);
  const int h = std::max(height_px, 1);
  int grid = ceil_div(w, model.tile_edge_px) * ceil_div(h, model.tile_edge_px);
  if (model.thumbnail_tile && grid > 1) ++grid;
  return std::min(grid, model.max_tiles_per_image);
}

std::int64_t image_tokens(int width_px, int height_px, const ModelSpec& model) {
  return static_cast<std::int64_t>(image_tiles(width_px, height_px, model)) *
         model.tokens_per_tile;
}

ImageSpec make_image(int width_px, int height_px, const ModelSpec& model) {
  ImageSpec img;
  img.width_px = width_px;
  img.height_px = height_px;
  img.tiles = image_tiles(width_px, height_px, model);
  img.image_tokens =
      static_cast<std::int64_t>(img.tiles) * model.tokens_per_tile;
  return img;
}

int Request::total_tiles() const {
  int t = 0;
  for (const auto& img : images) t += img.tiles;
  return t;
}

TokenTotals request_totals(const Request& r) {
  TokenTotals t;
  t.text = r.text_tokens;
  for (const auto& img : r.images) t.image += img.image_tokens;
  t.total = t.text + t.image;
  return t;
}

void validate_request(const Request& r) {
  if (r.text_tokens < 0) throw std::invalid_argument("negative text_tokens");
  if (r.output_tokens < 1) throw std::invalid_argument("output_tokens < 1");
  for (const auto& img : r.images) {
    if (img.width_px < 1 || img.height_px < 1 || img.tiles < 1) {
      throw std::invalid_argument("degenerate image");
    }
  }
  if (r.text_tokens + request_totals(r).image < 1) {
    throw std::invalid_argument("request carries no prompt tokens");
  }
}

void SLOSpec::validate() const {
  if (!(slo_factor > 0.0)) throw ConfigError("slo.slo_factor must be > 0");
  if (!(percentile > 0.0 && percentile <= 1.0)) {
    throw ConfigError("slo.percentile must be in (0, 1]");
  }
}

const std::vector<ModelSpec>& model_presets() {
  static const std::vector<ModelSpec> presets = {
      preset("Llama3.2-11B", Architecture::CroAttn, 560, 1601, 4, false, 0.63,
             8.0, 4, {1, 2, 4, 8}),
      preset("Llama3.2-90B", Architecture::CroAttn, 560, 1601, 4, false, 0.63,
             70.0, 8, {1, 2, 4, 8}),
      preset("LLaVA-OV-7B", Architecture::DecOnly, 384, 729, 10, true, 0.4,
             7.0, 4, {1, 2, 4, 8}),
      preset("LLaVA-OV-72B", Architecture::DecOnly, 384, 729, 10, true, 0.4,
             72.0, 8, {1, 2, 4, 8}),
      preset("InternVL-26B", Architecture::DecOnly, 448, 256, 5, true, 6.0,
             20.0, 8, {1, 2, 4, 8}),
      preset("NVLM-D-72B", Architecture::DecOnly, 448, 256, 5, true, 6.0,
             72.0, 8, {4, 8}),
  };
  return presets;
}

const ModelSpec& model_preset(std::string_view name) {
  for (const auto& m : model_presets()) {
    if (m.name == name) return m;
  }
  throw ConfigError("unknown model preset '" + std::string(name) + "'");
}

void to_json(nlohmann::json& j, const ModelSpec& m) {
  j = nlohmann::json{{"name", m.name},
                     {"architecture", to_string(m.architecture)},
                     {"tile_edge_px", m.tile_edge_px},
                     {"tokens_per_tile", m.tokens_per_tile},
                     {"max_tiles_per_image", m.max_tiles_per_image},
                     {"thumbnail_tile", m.thumbnail_tile},
                     {"encoder_params_b", m.encoder_params_b},
                     {"llm_params_b", m.llm_params_b},
                     {"default_tp_text", m.default_tp_text},
                     {"supported_tp_encoder", m.supported_tp_encoder},
                     {"supported_tp_text", m.supported_tp_text}};
}

void from_json(const nlohmann::json& j, ModelSpec& m) {
  ModelSpec d;
  m.name = j.at("name").get<std::string>();
  m.architecture = parse_architecture(j.at("architecture").get<std::string>());
  m.tile_edge_px = j.at("tile_edge_px").get<int>();
  m.tokens_per_tile = j.at("tokens_per_tile").get<int>();
  m.max_tiles_per_image = j.at("max_tiles_per_image").get<int>();
  m.thumbnail_tile = j.value("thumbnail_tile", false);
  m.encoder_params_b = j.value("encoder_params_b", 0.0);
  m.llm_params_b = j.value("llm_params_b", 0.0);
  m.default_tp_text = j.value("default_tp_text", 1);
  m.supported_tp_encoder =
      j.value("supported_tp_encoder", d.supported_tp_encoder);
  m.supported_tp_text = j.value("supported_tp_text", d.supported_tp_text);
  m.validate();
}

std::vector<ModelSpec> load_model_specs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open model spec file " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  std::vector<ModelSpec> out;
  try {
    if (j.is_array()) {
      for (const auto& e : j) out.push_back(e.get<ModelSpec>());
    } else {
      out.push_back(j.get<ModelSpec>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace mmsim
