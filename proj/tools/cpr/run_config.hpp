/* Copyright 2026 The cprlite Authors. All Rights Reserved.

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

#include <filesystem>
#include <string>
#include <vector>

#include "cpr/error.hpp"
#include "cpr/eval.hpp"
#include "cpr/localizer.hpp"
#include "cpr/model.hpp"
#include "cpr/refine.hpp"
#include "cpr/synthetic.hpp"

namespace cpr::tools {

// Every knob of a pipeline run. Stages share one config so a run can be
// reproduced from a single file.
struct RunConfig {
  std::filesystem::path workspace = ".";

  SceneConfig scene = SceneConfig::fixture();
  int train_images = kFixtureTrainImages;
  int eval_images = kFixtureEvalImages;

  double sigma = 0.25;
  std::uint64_t annotate_seed = 7;

  // Bag geometry shared by training and refinement.
  int radius = 8;
  int u0 = 8;
  SampleRegion region;

  ExtractorConfig cpr_extractor;
  TrainConfig cpr_train = [] {
    TrainConfig t;
    t.seed = 7;
    return t;
  }();

  RefineConfig refine;
  LocalizerConfig localizer = [] {
    LocalizerConfig l;
    l.train.seed = 7;
    return l;
  }();

  std::vector<double> taus = kDefaultTaus;
  int heatmap_bins = 10;

  // Applies the shared bag geometry to the stage configs and checks every
  // value. Throws InvalidArgument.
  void finalize();
};

// Thrown for unreadable or invalid configuration input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Layered configuration: defaults, then the optional file, then overrides of
// the form "dotted.key=value" (value parsed as JSON, else taken as a string).
// Unknown keys are rejected. A relative workspace in the file resolves
// against the file's directory.
RunConfig load_run_config(const std::filesystem::path& file,
                          const std::vector<std::string>& overrides);

// Canonical JSON text of a config (the workspace is omitted).
std::string dump_run_config(const RunConfig& config);

}  // namespace cpr::tools
