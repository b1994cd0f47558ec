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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/model.hpp"
#include "cpr/sampling.hpp"

namespace cpr {

struct RefineConfig {
  double delta1 = 0.1;  // absolute score floor
  double delta2 = 0.5;  // floor relative to the annotated point's score
  int radius = 8;
  int u0 = 8;
  SampleRegion region;
  // Constraint I: score thresholds. II: annotated category is the argmax.
  // III: the annotated point is the nearest same-category annotation.
  bool score_constraint = true;
  bool class_constraint = true;
  bool nearest_constraint = true;

  void validate() const;
};

struct SupportPoint {
  Point2 position;  // image pixels
  double weight = 0.0;
};

struct RefinedPoint {
  Point2 position;    // image pixels
  Point2 annotated;   // the input point, image pixels
  int object_id = 0;
  int category = 1;
  // Retained points, the annotated point first.
  std::vector<SupportPoint> support;

  double displacement() const { return distance(position, annotated); }
};

// Refines points[index] against the other annotations of the same image.
// Bag geometry and distances are evaluated on the feature map; the output is
// converted back to image pixels.
RefinedPoint refine_point(const CprModel& model, const FeatureMap& map,
                          std::span<const CoarsePoint> points, std::size_t index,
                          const RefineConfig& config);

struct RecordError {
  int image_id = 0;
  int object_id = 0;
  std::string message;
};

struct ImageRefineStats {
  int image_id = 0;
  int points = 0;
  double mean_support_size = 0.0;
  double mean_displacement = 0.0;
};

struct RefineResult {
  std::map<int, std::vector<RefinedPoint>> points;
  std::vector<RecordError> errors;
  std::vector<ImageRefineStats> stats;
};

// Refines every point. Points that reference unknown images or objects are
// reported in `errors`; the rest of the batch continues.
RefineResult refine_dataset(const CprModel& model, const Dataset& dataset,
                            const PointsByImage& points, const RefineConfig& config);

// Refined-point file: the coarse schema plus displacement and support_size.
PointFile to_point_file(const RefineResult& result, double sigma, std::uint64_t seed);
PointsByImage to_coarse_points(const RefineResult& result);

}  // namespace cpr
