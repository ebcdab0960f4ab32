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

#include "mmsim/profiles.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Dense>

namespace mmsim {

namespace {

constexpr int kCpuTp = 1;  // CPU stages are keyed under TP 1.

std::string_view to_string(LatencyForm f) {
  switch (f) {
    case LatencyForm::LinearInTokens: return "LinearInTokens";
    case LatencyForm::AffineInBatch: return "AffineInBatch";
    case LatencyForm::ConstantPerToken: return "ConstantPerToken";
    case LatencyForm::CrossAttnPrefill: return "CrossAttnPrefill";
  }
  return "?";
}

LatencyForm parse_form(std::string_view s) {
  for (auto f : {LatencyForm::LinearInTokens, LatencyForm::AffineInBatch,
                 LatencyForm::ConstantPerToken,
                 LatencyForm::CrossAttnPrefill}) {
    if (to_string(f) == s) return f;
  }
  throw ConfigError("unknown latency form '" + std::string(s) + "'");
}

// x*y/(x+y): symmetric, zero when either side is empty, maximal at x == y
// for a fixed sum.
double cross_tokens(double text, double image) {
  if (text <= 0.0 || image <= 0.0) return 0.0;
  return text * image / (text + image);
}

double relative_latency(const CalibrationTargets& t, StageKind stage, int tp) {
  auto it = t.tp_scaling.find(stage);
  if (it == t.tp_scaling.end()) return 1.0;
  auto jt = it->second.find(tp);
  if (jt == it->second.end()) {
    throw CalibrationError("tp_scaling", "tp_scaling for " +
                                             std::string(to_string(stage)) +
                                             " lacks TP " + std::to_string(tp));
  }
  return jt->second;
}

std::vector<int> scaling_tps(const CalibrationTargets& t, StageKind stage,
                             int ref_tp) {
  std::vector<int> tps;
  auto it = t.tp_scaling.find(stage);
  if (it != t.tp_scaling.end()) {
    for (const auto& [tp, rel] : it->second) tps.push_back(tp);
  }
  if (std::find(tps.begin(), tps.end(), ref_tp) == tps.end()) {
    tps.push_back(ref_tp);
  }
  std::sort(tps.begin(), tps.end());
  return tps;
}

StageLatencyModel blend(const StageLatencyModel& lo, const StageLatencyModel& hi,
                        int tp) {
  const double w = static_cast<double>(tp - lo.tp) / (hi.tp - lo.tp);
  StageLatencyModel m = lo;
  m.tp = tp;
  for (std::size_t i = 0; i < m.coefficients.size(); ++i) {
    m.coefficients[i].value = (1.0 - w) * lo.coefficients[i].value +
                              w * hi.coefficients[i].value;
  }
  return m;
}

}  // namespace

double StageLatencyModel::coef(const std::string& name) const {
  for (const auto& c : coefficients) {
    if (c.name == name) return c.value;
  }
  throw std::out_of_range("no coefficient '" + name + "' in " +
                          std::string(to_string(stage)) + " model");
}

void CalibrationTargets::validate() const {
  double sum = 0.0;
  for (auto stage :
       {StageKind::Preprocess, StageKind::Encode, StageKind::Prefill}) {
    auto it = ttft_breakdown.find(stage);
    const double f = it == ttft_breakdown.end() ? 0.0 : it->second;
    if (f < 0.0 || f > 1.0) {
      throw CalibrationError("ttft_breakdown." + std::string(to_string(stage)),
                             "breakdown fraction outside [0, 1]");
    }
    sum += f;
  }
  if (sum == 0.0) {
    throw CalibrationError("ttft_breakdown", "all breakdown fractions are zero");
  }
  if (std::abs(sum - 1.0) > 0.01) {
    std::ostringstream os;
    os << "breakdown fractions sum to " << sum << ", expected 1 +/- 0.01";
    throw CalibrationError("ttft_breakdown", os.str());
  }
  for (auto stage : {StageKind::Encode, StageKind::Prefill}) {
    auto it = ttft_breakdown.find(stage);
    if (it == ttft_breakdown.end() || it->second <= 0.0) {
      throw CalibrationError(
          "ttft_breakdown." + std::string(to_string(stage)),
          std::string(to_string(stage)) + " share must be positive");
    }
  }
  for (const auto& [stage, table] : tp_scaling) {
    for (const auto& [tp, rel] : table) {
      if (tp < 1 || !(rel > 0.0)) {
        throw CalibrationError("tp_scaling",
                               "tp_scaling entries need TP >= 1 and a "
                               "positive relative latency");
      }
    }
  }
  if (reference.text_tokens < 1) {
    throw CalibrationError("reference.text_tokens",
                           "reference request needs text tokens");
  }
  if (reference.cpu_cores < 1 || reference.tp < 1) {
    throw CalibrationError("reference", "reference cores and TP must be >= 1");
  }
  if (!(reference_ttft_ms > 0.0)) {
    throw CalibrationError("reference_ttft_ms", "reference TTFT must be > 0");
  }
  if (!(tbt_base_ms > 0.0)) {
    throw CalibrationError("tbt_base_ms", "TBT base must be > 0");
  }
  if (decode_max_batch < 1) {
    throw CalibrationError("decode_max_batch", "decode_max_batch must be >= 1");
  }
  auto it = batch_slopes.find(StageKind::Decode);
  if (it != batch_slopes.end() && it->second < 0.0) {
    throw CalibrationError("batch_slopes.Decode", "negative decode slope");
  }
}

StageLatencyModel LatencyProfile::entry(StageKind stage, int tp) const {
  if (stage == StageKind::Preprocess) tp = kCpuTp;
  if (auto it = entries.find({stage, tp}); it != entries.end()) {
    return it->second;
  }
  const StageLatencyModel* lo = nullptr;
  const StageLatencyModel* hi = nullptr;
  for (const auto& [key, m] : entries) {
    if (key.first != stage) continue;
    if (key.second < tp) lo = &m;
    if (key.second > tp && hi == nullptr) hi = &m;
  }
  if (lo == nullptr || hi == nullptr) {
    throw ConfigError("no " + std::string(to_string(stage)) +
                      " profile covers TP " + std::to_string(tp) + " for " +
                      model.name);
  }
  return blend(*lo, *hi, tp);
}

bool LatencyProfile::has_stage(StageKind stage) const {
  return std::any_of(entries.begin(), entries.end(),
                     [&](const auto& e) { return e.first.first == stage; });
}

std::vector<int> LatencyProfile::profiled_tps(StageKind stage) const {
  std::vector<int> tps;
  for (const auto& [key, m] : entries) {
    if (key.first == stage) tps.push_back(key.second);
  }
  return tps;
}

Request LatencyProfile::reference_request(bool with_image) const {
  Request r;
  r.text_tokens = targets.reference.text_tokens;
  r.output_tokens = 1;
  if (with_image) {
    r.images.push_back(make_image(targets.reference.width_px,
                                  targets.reference.height_px, model));
  }
  return r;
}

double encode_latency_ms(std::int64_t batch_tiles, int tp,
                         const LatencyProfile& profile) {
  if (batch_tiles < 1) throw std::invalid_argument("encode batch needs >= 1 tile");
  if (!profile.model.supports_encoder_tp(tp)) {
    throw ConfigError("encoder of " + profile.model.name +
                      " does not support TP " + std::to_string(tp));
  }
  return profile.entry(StageKind::Encode, tp).coef("ms_per_tile") *
         static_cast<double>(batch_tiles);
}

double cross_attention_ms(std::int64_t text_tokens, std::int64_t image_tokens,
                          int tp, const LatencyProfile& profile) {
  if (profile.model.architecture != Architecture::CroAttn) return 0.0;
  return profile.entry(StageKind::Prefill, tp).coef("ms_per_cross_token") *
         cross_tokens(static_cast<double>(text_tokens),
                      static_cast<double>(image_tokens));
}

double prefill_latency_ms(std::int64_t text_tokens, std::int64_t image_tokens,
                          int tp, const LatencyProfile& profile) {
  if (text_tokens < 0 || image_tokens < 0 || text_tokens + image_tokens < 1) {
    throw std::domain_error("prefill needs at least one prompt token");
  }
  const StageLatencyModel m = profile.entry(StageKind::Prefill, tp);
  if (profile.model.architecture == Architecture::DecOnly) {
    return m.coef("ms_per_token") *
           static_cast<double>(text_tokens + image_tokens);
  }
  return m.coef("ms_per_text_token") * static_cast<double>(text_tokens) +
         m.coef("ms_per_cross_token") *
             cross_tokens(static_cast<double>(text_tokens),
                          static_cast<double>(image_tokens));
}

double preprocess_latency_ms(std::int64_t tiles, int cpu_cores,
                             const LatencyProfile& profile) {
  if (cpu_cores < 1) throw std::invalid_argument("preprocess needs >= 1 core");
  if (tiles <= 0) return 0.0;
  const StageLatencyModel m = profile.entry(StageKind::Preprocess, kCpuTp);
  return std::max(m.coef("floor_ms"), m.coef("ms_per_tile_core") *
                                          static_cast<double>(tiles) /
                                          cpu_cores);
}

double tbt_latency_ms(int batch, int tp, const LatencyProfile& profile) {
  if (batch < 1) throw std::invalid_argument("decode batch must be >= 1");
  if (batch > profile.decode_max_batch()) {
    throw std::logic_error("decode batch " + std::to_string(batch) +
                           " exceeds max_batch " +
                           std::to_string(profile.decode_max_batch()));
  }
  const StageLatencyModel m = profile.entry(StageKind::Decode, tp);
  return m.coef("intercept_ms") + m.coef("ms_per_request") * batch;
}

ReferenceJob reference_job(StageKind stage, int tp,
                           const LatencyProfile& profile) {
  const Request ref = profile.reference_request(true);
  const TokenTotals tot = request_totals(ref);
  ReferenceJob job;
  switch (stage) {
    case StageKind::Encode:
      job.service_ms = encode_latency_ms(ref.total_tiles(), tp, profile);
      job.tokens = static_cast<double>(tot.image);
      break;
    case StageKind::Prefill:
      job.service_ms = prefill_latency_ms(tot.text, tot.image, tp, profile);
      job.tokens = static_cast<double>(
          profile.model.architecture == Architecture::DecOnly ? tot.total
                                                              : tot.text);
      break;
    default:
      throw std::invalid_argument("no reference job for stage " +
                                  std::string(to_string(stage)));
  }
  return job;
}

CapacityEstimate max_capacity(StageKind stage, int tp, double slo_share_ms,
                              const LatencyProfile& profile) {
  if (!(slo_share_ms > 0.0)) {
    throw std::invalid_argument("slo_share must be positive");
  }
  const ReferenceJob job = reference_job(stage, tp, profile);
  // D + rho*D / (2(1 - rho)) <= share  <=>  rho <= 2(r-1) / (1 + 2(r-1)).
  const double r = slo_share_ms / job.service_ms;
  if (r <= 1.0) return {};
  const double slack = 2.0 * (r - 1.0);
  const double rho = slack / (1.0 + slack);
  return {rho * job.tokens / (job.service_ms / 1000.0), true};
}

std::map<StageKind, double> predicted_breakdown(const LatencyProfile& profile) {
  const auto& ref = profile.reference();
  const Request r = profile.reference_request(true);
  const TokenTotals tot = request_totals(r);
  const double pre = preprocess_latency_ms(r.total_tiles(), ref.cpu_cores, profile);
  const double enc = encode_latency_ms(r.total_tiles(), ref.tp, profile);
  const double pf = prefill_latency_ms(tot.text, tot.image, ref.tp, profile);
  const double ttft = pre + enc + pf;
  return {{StageKind::Preprocess, pre / ttft},
          {StageKind::Encode, enc / ttft},
          {StageKind::Prefill, pf / ttft}};
}

double predicted_mixed_gain(const LatencyProfile& profile) {
  const auto& t = profile.targets;
  const auto& ref = t.reference;
  const int tiles_per_image = image_tiles(t.mixed_image_px, t.mixed_image_px,
                                          profile.model);
  const std::int64_t tokens_per_image =
      image_tokens(t.mixed_image_px, t.mixed_image_px, profile.model);
  const std::int64_t images =
      std::max<std::int64_t>(1, t.mixed_total_tokens / tokens_per_image);
  const std::int64_t tiles = images * tiles_per_image;
  const double image_only =
      preprocess_latency_ms(tiles, ref.cpu_cores, profile) +
      encode_latency_ms(tiles, ref.tp, profile) +
      // CroAttn with no text tokens has no prefill work; DecOnly still pays.
      (profile.model.architecture == Architecture::DecOnly
           ? prefill_latency_ms(0, images * tokens_per_image, ref.tp, profile)
           : 0.0);
  const double text_only =
      prefill_latency_ms(images * tokens_per_image, 0, ref.tp, profile);
  return image_only / text_only;
}

LatencyProfile calibrate(const CalibrationTargets& targets,
                         const ModelSpec& model) {
  model.validate();
  targets.validate();
  const bool cross = model.architecture == Architecture::CroAttn;
  if (cross && !(targets.mixed_modality_gain > 0.0)) {
    throw CalibrationError("mixed_modality_gain",
                           "CroAttn calibration needs a positive "
                           "mixed_modality_gain");
  }
  const auto& ref = targets.reference;
  if (!model.supports_encoder_tp(ref.tp)) {
    throw CalibrationError("reference.tp",
                           "reference TP not supported by the encoder");
  }
  const double T = targets.reference_ttft_ms;
  auto share = [&](StageKind s) {
    auto it = targets.ttft_breakdown.find(s);
    return it == targets.ttft_breakdown.end() ? 0.0 : it->second;
  };
  const ImageSpec img = make_image(ref.width_px, ref.height_px, model);
  const double tiles = img.tiles;
  const double text = static_cast<double>(ref.text_tokens);
  const double itok = static_cast<double>(img.image_tokens);

  // Unknowns: [ms per tile-core, ms per tile, ms per (text) token,
  // ms per cross token]. Rows are normalized by the reference TTFT.
  const int n = cross ? 4 : 3;
  const int rows = cross ? 4 : 3;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(rows, n);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(rows);
  A(0, 0) = tiles / ref.cpu_cores / T;
  b(0) = share(StageKind::Preprocess);
  A(1, 1) = tiles / T;
  b(1) = share(StageKind::Encode);
  if (cross) {
    A(2, 2) = text / T;
    A(2, 3) = cross_tokens(text, itok) / T;
  } else {
    A(2, 2) = (text + itok) / T;
  }
  b(2) = share(StageKind::Prefill);
  if (cross) {
    const int mixed_tiles = image_tiles(targets.mixed_image_px,
                                        targets.mixed_image_px, model);
    const std::int64_t per_image =
        image_tokens(targets.mixed_image_px, targets.mixed_image_px, model);
    const double images =
        std::max<std::int64_t>(1, targets.mixed_total_tokens / per_image);
    const double mix_tiles = images * mixed_tiles;
    // TTFT(image only) - gain * TTFT(text only) = 0.
    A(3, 0) = mix_tiles / ref.cpu_cores / T;
    A(3, 1) = mix_tiles / T;
    A(3, 2) = -targets.mixed_modality_gain * images * per_image / T;
  }
  const Eigen::VectorXd x = A.colPivHouseholderQr().solve(b);

  const char* names[] = {"ttft_breakdown.Preprocess", "ttft_breakdown.Encode",
                         "ttft_breakdown.Prefill", "mixed_modality_gain"};
  for (int i = 1; i < n; ++i) {
    if (!(x(i) > 0.0)) {
      throw CalibrationError(names[std::min(i, 3)],
                             "targets imply a non-positive stage constant");
    }
  }
  const double k_prep = std::max(0.0, x(0));

  LatencyProfile p;
  p.model = model;
  p.targets = targets;
  p.entries[{StageKind::Preprocess, kCpuTp}] = StageLatencyModel{
      StageKind::Preprocess, kCpuTp, LatencyForm::ConstantPerToken,
      {{"ms_per_tile_core", k_prep, "ms*core/tile"},
       {"floor_ms", share(StageKind::Preprocess) > 0.0
                        ? std::min(targets.preprocess_floor_ms,
                                   k_prep * tiles / ref.cpu_cores)
                        : 0.0,
        "ms"}}};

  for (int tp : scaling_tps(targets, StageKind::Encode, ref.tp)) {
    if (!model.supports_encoder_tp(tp)) continue;
    const double s = relative_latency(targets, StageKind::Encode, tp) /
                     relative_latency(targets, StageKind::Encode, ref.tp);
    p.entries[{StageKind::Encode, tp}] = StageLatencyModel{
        StageKind::Encode, tp, LatencyForm::LinearInTokens,
        {{"ms_per_tile", x(1) * s, "ms/tile"}}};
  }
  for (int tp : scaling_tps(targets, StageKind::Prefill, ref.tp)) {
    const double s = relative_latency(targets, StageKind::Prefill, tp) /
                     relative_latency(targets, StageKind::Prefill, ref.tp);
    if (cross) {
      p.entries[{StageKind::Prefill, tp}] = StageLatencyModel{
          StageKind::Prefill, tp, LatencyForm::CrossAttnPrefill,
          {{"ms_per_text_token", x(2) * s, "ms/token"},
           {"ms_per_cross_token", x(3) * s, "ms/token"}}};
    } else {
      p.entries[{StageKind::Prefill, tp}] = StageLatencyModel{
          StageKind::Prefill, tp, LatencyForm::LinearInTokens,
          {{"ms_per_token", x(2) * s, "ms/token"}}};
    }
  }
  const double slope = targets.batch_slopes.count(StageKind::Decode)
                           ? targets.batch_slopes.at(StageKind::Decode)
                           : 0.0;
  for (int tp : scaling_tps(targets, StageKind::Decode, ref.tp)) {
    const double base = targets.tbt_base_ms *
                        relative_latency(targets, StageKind::Decode, tp) /
                        relative_latency(targets, StageKind::Decode, ref.tp);
    // tbt(b) = base * (1 + slope * (b - 1)) written as intercept + k * b.
    p.entries[{StageKind::Decode, tp}] = StageLatencyModel{
        StageKind::Decode, tp, LatencyForm::AffineInBatch,
        {{"intercept_ms", base * (1.0 - slope), "ms"},
         {"ms_per_request", base * slope, "ms/request"}}};
  }

  // Round-trip: every target must be reproduced within 1%.
  const auto got = predicted_breakdown(p);
  for (auto stage :
       {StageKind::Preprocess, StageKind::Encode, StageKind::Prefill}) {
    const double want = share(stage);
    const double have = got.at(stage);
    if (std::abs(have - want) > 0.01 * std::max(want, 0.01)) {
      std::ostringstream os;
      os << to_string(stage) << " share " << have << " misses target " << want;
      throw CalibrationError("ttft_breakdown." + std::string(to_string(stage)),
                             os.str());
    }
  }
  if (cross) {
    const double g = predicted_mixed_gain(p);
    if (std::abs(g - targets.mixed_modality_gain) >
        0.01 * targets.mixed_modality_gain) {
      std::ostringstream os;
      os << "mixed-modality gain " << g << " misses target "
         << targets.mixed_modality_gain;
      throw CalibrationError("mixed_modality_gain", os.str());
    }
  }
  return p;
}

CalibrationTargets preset_targets(const std::string& model_name) {
  const ModelSpec& m = model_preset(model_name);
  CalibrationTargets t;
  t.reference.tp = m.default_tp_text;
  t.reference.cpu_cores = 12 * m.default_tp_text;
  t.batch_slopes[StageKind::Decode] = 0.02;

  // Relative latencies normalized to TP-8.
  const std::map<int, double> small_vit{{1, 1.15}, {2, 0.95}, {4, 0.85}, {8, 1.0}};
  const std::map<int, double> siglip{{1, 1.1}, {2, 0.95}, {4, 0.9}, {8, 1.0}};
  const std::map<int, double> internvit{{1, 4.0}, {2, 2.2}, {4, 1.3}, {8, 1.0}};
  const std::map<int, double> llm_small{{1, 3.0}, {2, 1.8}, {4, 1.3}, {8, 1.0}};
  const std::map<int, double> llm_mid{{1, 4.5}, {2, 2.5}, {4, 1.5}, {8, 1.0}};
  const std::map<int, double> llm_large{{4, 1.6}, {8, 1.0}};
  const std::map<int, double> tbt_small{{1, 0.8}, {2, 0.85}, {4, 0.92}, {8, 1.0}};
  const std::map<int, double> tbt_mid{{1, 1.2}, {2, 1.0}, {4, 0.95}, {8, 1.0}};
  const std::map<int, double> tbt_large{{4, 1.1}, {8, 1.0}};

  auto set = [&](double pre, double enc, const std::map<int, double>& e,
                 const std::map<int, double>& pf,
                 const std::map<int, double>& dec, double tbt) {
    t.ttft_breakdown = {{StageKind::Preprocess, pre},
                        {StageKind::Encode, enc},
                        {StageKind::Prefill, 1.0 - pre - enc}};
    t.tp_scaling = {{StageKind::Encode, e},
                    {StageKind::Prefill, pf},
                    {StageKind::Decode, dec}};
    t.tbt_base_ms = tbt;
  };

  if (m.name == "Llama3.2-11B") {
    set(0.05, 0.79, small_vit, llm_small, tbt_small, 25.0);
    t.mixed_modality_gain = 1.5;
    t.reference.text_tokens = 1696;
  } else if (m.name == "Llama3.2-90B") {
    set(0.04, 0.65, small_vit, llm_large, tbt_large, 45.0);
    t.mixed_modality_gain = 1.5;
    t.reference.text_tokens = 4067;
  } else if (m.name == "LLaVA-OV-7B") {
    set(0.05, 0.12, siglip, llm_small, tbt_small, 25.0);
  } else if (m.name == "LLaVA-OV-72B") {
    set(0.03, 0.05, siglip, llm_large, tbt_large, 45.0);
  } else if (m.name == "InternVL-26B") {
    set(0.05, 0.25, internvit, llm_mid, tbt_mid, 35.0);
  } else if (m.name == "NVLM-D-72B") {
    set(0.04, 0.54, {{4, 1.3}, {8, 1.0}}, llm_large, tbt_large, 45.0);
  }
  return t;
}

void to_json(nlohmann::json& j, const CalibrationTargets& t) {
  nlohmann::json breakdown, scaling, slopes;
  for (const auto& [s, f] : t.ttft_breakdown) breakdown[std::string(to_string(s))] = f;
  for (const auto& [s, table] : t.tp_scaling) {
    nlohmann::json row;
    for (const auto& [tp, rel] : table) row[std::to_string(tp)] = rel;
    scaling[std::string(to_string(s))] = row;
  }
  for (const auto& [s, v] : t.batch_slopes) slopes[std::string(to_string(s))] = v;
  j = nlohmann::json{
      {"ttft_breakdown", breakdown},
      {"tp_scaling", scaling},
      {"batch_slopes", slopes},
      {"mixed_modality_gain", t.mixed_modality_gain},
      {"mixed_total_tokens", t.mixed_total_tokens},
      {"mixed_image_px", t.mixed_image_px},
      {"reference",
       {{"text_tokens", t.reference.text_tokens},
        {"width_px", t.reference.width_px},
        {"height_px", t.reference.height_px},
        {"cpu_cores", t.reference.cpu_cores},
        {"tp", t.reference.tp}}},
      {"reference_ttft_ms", t.reference_ttft_ms},
      {"tbt_base_ms", t.tbt_base_ms},
      {"preprocess_floor_ms", t.preprocess_floor_ms},
      {"decode_max_batch", t.decode_max_batch}};
}

void from_json(const nlohmann::json& j, CalibrationTargets& t) {
  CalibrationTargets d;
  t = d;
  t.ttft_breakdown.clear();
  for (const auto& [k, v] : j.at("ttft_breakdown").items()) {
    t.ttft_breakdown[parse_stage(k)] = v.get<double>();
  }
  t.tp_scaling.clear();
  if (j.contains("tp_scaling")) {
    for (const auto& [k, row] : j.at("tp_scaling").items()) {
      auto& table = t.tp_scaling[parse_stage(k)];
      for (const auto& [tp, rel] : row.items()) table[std::stoi(tp)] = rel.get<double>();
    }
  }
  if (j.contains("batch_slopes")) {
    for (const auto& [k, v] : j.at("batch_slopes").items()) {
      t.batch_slopes[parse_stage(k)] = v.get<double>();
    }
  }
  t.mixed_modality_gain = j.value("mixed_modality_gain", 0.0);
  t.mixed_total_tokens = j.value("mixed_total_tokens", d.mixed_total_tokens);
  t.mixed_image_px = j.value("mixed_image_px", d.mixed_image_px);
  if (j.contains("reference")) {
    const auto& r = j.at("reference");
    t.reference.text_tokens = r.value("text_tokens", d.reference.text_tokens);
    t.reference.width_px = r.value("width_px", d.reference.width_px);
    t.reference.height_px = r.value("height_px", d.reference.height_px);
    t.reference.cpu_cores = r.value("cpu_cores", d.reference.cpu_cores);
    t.reference.tp = r.value("tp", d.reference.tp);
  }
  t.reference_ttft_ms = j.value("reference_ttft_ms", d.reference_ttft_ms);
  t.tbt_base_ms = j.value("tbt_base_ms", d.tbt_base_ms);
  t.preprocess_floor_ms = j.value("preprocess_floor_ms", d.preprocess_floor_ms);
  t.decode_max_batch = j.value("decode_max_batch", d.decode_max_batch);
}

void to_json(nlohmann::json& j, const LatencyProfile& p) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [key, m] : p.entries) {
    nlohmann::json coefs = nlohmann::json::array();
    for (const auto& c : m.coefficients) {
      coefs.push_back({{"name", c.name}, {"value", c.value}, {"units", c.units}});
    }
    entries.push_back({{"stage", to_string(m.stage)},
                       {"tp", m.tp},
                       {"form", to_string(m.form)},
                       {"coefficients", coefs}});
  }
  j = nlohmann::json{{"model", p.model}, {"targets", p.targets}, {"entries", entries}};
}

void from_json(const nlohmann::json& j, LatencyProfile& p) {
  p.model = j.at("model").get<ModelSpec>();
  p.targets = j.at("targets").get<CalibrationTargets>();
  p.entries.clear();
  for (const auto& e : j.at("entries")) {
    StageLatencyModel m;
    m.stage = parse_stage(e.at("stage").get<std::string>());
    m.tp = e.at("tp").get<int>();
    m.form = parse_form(e.at("form").get<std::string>());
    for (const auto& c : e.at("coefficients")) {
      m.coefficients.push_back({c.at("name").get<std::string>(),
                                c.at("value").get<double>(),
                                c.value("units", std::string())});
    }
    p.entries[{m.stage, m.tp}] = std::move(m);
  }
}

void save_profile(const LatencyProfile& p, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json(p).dump(2) << '\n';
}

LatencyProfile load_profile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open profile " + path.string());
  try {
    nlohmann::json j;
    in >> j;
    return j.get<LatencyProfile>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace mmsim
