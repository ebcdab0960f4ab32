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
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mmsim/model.hpp"

namespace mmsim {

// Raised when calibration targets cannot be met; `constraint()` names the
// offending target so the CLI can report it.
class CalibrationError : public std::runtime_error {
 public:
  CalibrationError(std::string constraint, const std::string& what)
      : std::runtime_error(what), constraint_(std::move(constraint)) {}
  const std::string& constraint() const { return constraint_; }

 private:
  std::string constraint_;
};

enum class LatencyForm {
  LinearInTokens,
  AffineInBatch,
  ConstantPerToken,
  CrossAttnPrefill
};

struct Coefficient {
  std::string name;
  double value = 0.0;
  std::string units;
};

struct StageLatencyModel {
  StageKind stage = StageKind::Encode;
  int tp = 1;
  LatencyForm form = LatencyForm::LinearInTokens;
  std::vector<Coefficient> coefficients;

  // Throws std::out_of_range for unknown names.
  double coef(const std::string& name) const;
};

// The single request every stage share is measured against.
struct ReferenceRequest {
  std::int64_t text_tokens = 1000;
  int width_px = 896;
  int height_px = 896;
  int cpu_cores = 96;
  int tp = 8;
};

struct CalibrationTargets {
  // Fractions of the reference TTFT (Preprocess, Encode, Prefill).
  std::map<StageKind, double> ttft_breakdown;
  // Latency relative to TP-8, per stage and TP degree.
  std::map<StageKind, std::map<int, double>> tp_scaling;
  // Relative TBT growth per extra request in a decode batch.
  std::map<StageKind, double> batch_slopes;
  // TTFT(image-only) / TTFT(text-only) for a fixed-size mixed request.
  // Required for CroAttn models, ignored for DecOnly.
  double mixed_modality_gain = 0.0;
  std::int64_t mixed_total_tokens = 16010;
  int mixed_image_px = 560;

  ReferenceRequest reference;
  double reference_ttft_ms = 1000.0;
  double tbt_base_ms = 30.0;
  double preprocess_floor_ms = 1.0;
  int decode_max_batch = 256;

  // Throws CalibrationError naming the violated constraint.
  void validate() const;
};

class LatencyProfile {
 public:
  ModelSpec model;
  CalibrationTargets targets;
  std::map<std::pair<StageKind, int>, StageLatencyModel> entries;

  // Exact entry or a piecewise-linear blend of the neighbouring profiled TP
  // points. Throws ConfigError when `tp` lies outside the profiled range.
  StageLatencyModel entry(StageKind stage, int tp) const;
  bool has_stage(StageKind stage) const;
  std::vector<int> profiled_tps(StageKind stage) const;

  const ReferenceRequest& reference() const { return targets.reference; }
  int decode_max_batch() const { return targets.decode_max_batch; }
  Request reference_request(bool with_image) const;
};

double encode_latency_ms(std::int64_t batch_tiles, int tp,
                         const LatencyProfile& profile);
double prefill_latency_ms(std::int64_t text_tokens, std::int64_t image_tokens,
                          int tp, const LatencyProfile& profile);
// The cross-attention component of CroAttn prefill; zero for DecOnly.
double cross_attention_ms(std::int64_t text_tokens, std::int64_t image_tokens,
                          int tp, const LatencyProfile& profile);
double preprocess_latency_ms(std::int64_t tiles, int cpu_cores,
                             const LatencyProfile& profile);
double tbt_latency_ms(int batch, int tp, const LatencyProfile& profile);

// Service time and size of the stage's reference job at `tp`. Tokens are
// image tokens for Encode, total prompt tokens for DecOnly prefill and text
// tokens for CroAttn prefill.
struct ReferenceJob {
  double service_ms = 0.0;
  double tokens = 0.0;
};
ReferenceJob reference_job(StageKind stage, int tp,
                           const LatencyProfile& profile);

struct CapacityEstimate {
  double tokens_per_sec = 0.0;
  bool feasible = false;
};

// Largest sustained token rate whose M/D/1 latency (service + mean wait)
// stays within `slo_share_ms`.
CapacityEstimate max_capacity(StageKind stage, int tp, double slo_share_ms,
                              const LatencyProfile& profile);

// Stage fractions of the reference request's TTFT under `profile`.
std::map<StageKind, double> predicted_breakdown(const LatencyProfile& profile);
// TTFT(image-only) / TTFT(text-only) for the mixed sweep geometry.
double predicted_mixed_gain(const LatencyProfile& profile);

LatencyProfile calibrate(const CalibrationTargets& targets,
                         const ModelSpec& model);

// Built-in targets for the shipped model presets.
CalibrationTargets preset_targets(const std::string& model_name);

void to_json(nlohmann::json& j, const CalibrationTargets& t);
void from_json(const nlohmann::json& j, CalibrationTargets& t);
void to_json(nlohmann::json& j, const LatencyProfile& p);
void from_json(const nlohmann::json& j, LatencyProfile& p);

void save_profile(const LatencyProfile& p, const std::filesystem::path& path);
LatencyProfile load_profile(const std::filesystem::path& path);

}  // namespace mmsim
