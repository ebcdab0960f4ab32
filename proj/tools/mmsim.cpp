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

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mmsim/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Multimodal serving cluster simulator"};
  app.require_subcommand(1);

  std::string config, out = "out", axis, targets, model;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> values;
  bool force = false;

  auto* simulate = app.add_subcommand("simulate", "run the configured experiment per seed");
  simulate->add_option("--config", config, "experiment JSON")->required();
  simulate->add_option("--out", out, "output directory");
  simulate->add_option("--seeds", seeds, "override the seed list")->delimiter(',');

  auto* capacity = app.add_subcommand("capacity", "largest request rate meeting the SLOs");
  capacity->add_option("--config", config, "experiment JSON")->required();
  capacity->add_option("--out", out, "output directory");
  capacity->add_option("--seeds", seeds, "override the probe seeds")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "grid over one config field");
  sweep->add_option("--config", config, "experiment JSON")->required();
  sweep->add_option("--out", out, "output directory");
  sweep->add_option("--axis", axis, "ratio|image_fraction|load_scale|slo_factor|servers|transfer")
      ->required();
  sweep->add_option("--values", values, "comma-separated values")->required()->delimiter(',');
  sweep->add_option("--seeds", seeds, "override the seed list")->delimiter(',');

  auto* cal = app.add_subcommand("calibrate", "fit a latency profile to stage targets");
  cal->add_option("--model", model, "preset name or model spec JSON")->required();
  cal->add_option("--targets", targets, "calibration targets JSON (default: built-in)");
  cal->add_option("--out", out, "output directory");
  cal->add_flag("--force", force, "recalibrate even if a cached profile exists");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  std::optional<std::vector<std::uint64_t>> seed_override;
  if (!seeds.empty()) seed_override = seeds;

  if (*simulate) return mmsim::cmd_simulate(config, out, seed_override, std::cout, std::cerr);
  if (*capacity) return mmsim::cmd_capacity(config, out, seed_override, std::cout, std::cerr);
  if (*sweep) {
    return mmsim::cmd_sweep(config, out, axis, values, seed_override, std::cout, std::cerr);
  }
  return mmsim::cmd_calibrate(targets, model, out, force, std::cout, std::cerr);
}
