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
#include <span>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/eval.hpp"
#include "cpr/model.hpp"

namespace cpr {

struct LocalizerConfig {
  ExtractorConfig extractor;
  double positive_radius = 1.5;  // feature-map cells
  int top_k = 4;
  double score_threshold = 0.2;
  double nms_radius = 12.0;  // image pixels
  TrainConfig train = default_train();

  // CPR schedule with learning rate 0.05.
  static TrainConfig default_train() {
    TrainConfig t;
    t.learning_rate = 0.05;
    return t;
  }

  void validate() const;
};

// Per-cell K-way sigmoid classifier over extractor features.
struct LocalizerModel {
  int num_categories = 1;
  Extractor extractor;
  LinearHead cls;

  static LocalizerModel create(int num_categories, const ExtractorConfig& config,
                               std::uint64_t seed);
};

std::vector<std::span<double>> parameter_blocks(LocalizerModel& model);
std::vector<double> flatten_parameters(const LocalizerModel& model);

// h*w x K score map.
RowMatrix score_map(const LocalizerModel& model, const FeatureMap& map);

// Cells assigned as positives for one point: the top_k cells nearest to the
// point among those within positive_radius (ties by row-major index).
std::vector<Cell> positive_cells(const Point2& map_point, const MapExtent& extent,
                                 double positive_radius, int top_k);

struct LocalizerTrainResult {
  LocalizerModel model;
  std::vector<double> loss_trace;  // mean focal loss per epoch
};

LocalizerTrainResult train_localizer(const Dataset& dataset, const PointsByImage& points,
                                     const LocalizerConfig& config);

// Greedy by descending score (ties by position, then category); suppresses
// points closer than `radius` to a kept point of the same category.
std::vector<PredictedPoint> point_nms(std::span<const PredictedPoint> points, double radius);

// Thresholded per-category local maxima of the score map, at cell centers, after
// point_nms; sorted by descending score.
std::vector<PredictedPoint> predict_points(const LocalizerModel& model, const Image& image,
                                           const LocalizerConfig& config);
std::vector<PredictedPoint> predict_from_scores(const RowMatrix& scores, const MapExtent& extent,
                                                int stride, const LocalizerConfig& config);

PredictionsByImage predict_dataset(const LocalizerModel& model, const Dataset& dataset,
                                   const LocalizerConfig& config);

void save_localizer(const std::filesystem::path& path, const LocalizerModel& model,
                    const LocalizerConfig& config);
LocalizerModel load_localizer(const std::filesystem::path& path);

}  // namespace cpr
