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

#include <array>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "cpr/run_config.hpp"

namespace cpr::tools {

// File locations inside a workspace.
struct Layout {
  std::filesystem::path root;

  std::filesystem::path train_dataset() const { return root / "data" / "train.json"; }
  std::filesystem::path eval_dataset() const { return root / "data" / "eval.json"; }
  std::filesystem::path train_oracle() const { return root / "data" / "oracle_train.json"; }
  std::filesystem::path eval_oracle() const { return root / "data" / "oracle_eval.json"; }
  std::filesystem::path coarse_points() const { return root / "points" / "coarse.json"; }
  std::filesystem::path refined_points() const { return root / "points" / "refined.json"; }
  std::filesystem::path refine_support() const { return root / "points" / "refine_support.json"; }
  std::filesystem::path refine_errors() const { return root / "points" / "refine_errors.json"; }
  std::filesystem::path cpr_model() const { return root / "cpr" / "model.json"; }
  std::filesystem::path cpr_loss() const { return root / "cpr" / "loss.csv"; }
  std::filesystem::path localizer_model(const std::string& s) const {
    return root / "localizer" / s / "model.json";
  }
  std::filesystem::path predictions(const std::string& s) const {
    return root / "localizer" / s / "predictions.json";
  }
  std::filesystem::path eval_report(const std::string& s) const { return root / "eval" / s / "report.json"; }
  std::filesystem::path render_dir() const { return root / "render"; }
  std::filesystem::path summary(const std::string& stage) const {
    return root / "summaries" / (stage + ".json");
  }
};

// A stage was run before the stage that produces its inputs.
class MissingArtifact : public Error {
 public:
  using Error::Error;
};

struct StageSummary {
  std::string stage;
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::string> outputs;  // workspace-relative
  // Human-readable table rows.
  std::vector<std::string> table;
  // Records that could not be processed; the stage still wrote its outputs.
  int failed_records = 0;
};

// Palette used by render.
inline constexpr std::array<double, 3> kAnnotatedColor{0.0, 1.0, 0.0};
inline constexpr std::array<double, 3> kSupportColor{1.0, 0.0, 0.0};
inline constexpr std::array<double, 3> kRefinedColor{1.0, 1.0, 0.0};

enum class Supervision { kCoarse, kRefined };
std::string to_string(Supervision s);

StageSummary cmd_synth(const RunConfig& config);
StageSummary cmd_annotate(const RunConfig& config);
StageSummary cmd_train(const RunConfig& config);
StageSummary cmd_refine(const RunConfig& config);
StageSummary cmd_localize(const RunConfig& config, const std::vector<Supervision>& supervision);
StageSummary cmd_eval(const RunConfig& config);
StageSummary cmd_render(const RunConfig& config);

// Every stage in order, both supervision sources.
std::vector<StageSummary> run_pipeline(const RunConfig& config);

void print_summary(std::ostream& out, const StageSummary& summary);

// Mean distance from points to the oracle centroids of their objects.
double mean_oracle_distance(const PointsByImage& points, const OracleCenters& centers);

}  // namespace cpr::tools
