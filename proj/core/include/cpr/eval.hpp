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
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/geometry.hpp"

namespace cpr {

struct PredictedPoint {
  Point2 position;  // image pixels
  int category = 1;
  double score = 0.0;

  friend bool operator==(const PredictedPoint&, const PredictedPoint&) = default;
};

using PredictionsByImage = std::map<int, std::vector<PredictedPoint>>;

// Width/height-normalized distance between p and the box center. Throws
// InvalidArgument for a degenerate box.
double point_box_distance(const Point2& p, const BoundingBox& box);

enum class Outcome { kTruePositive, kFalsePositive, kIgnored };

struct PredictionOutcome {
  Outcome outcome = Outcome::kFalsePositive;
  int object_index = -1;  // matched (or absorbing ignore) object, else -1
};

// Indexed like the inputs: predictions[i] describes preds[i], gt_matched[j]
// describes gts[j].
struct MatchLedger {
  std::vector<PredictionOutcome> predictions;
  std::vector<bool> gt_matched;

  int true_positives() const;
  int false_positives() const;
  int ignored() const;
};

// Greedy matching in descending score order (ties by input index). A
// prediction may match objects of its own category with distance <= tau; it
// takes the nearest still-unmatched non-ignore candidate (ties by object
// index). Failing that, a candidate ignore object absorbs it (neither TP nor
// FP); otherwise it is a false positive. Ignore objects may absorb any number
// of predictions.
MatchLedger match_predictions(std::span<const PredictedPoint> preds,
                              std::span<const ObjectAnnotation> gts, double tau);

struct RankedEntry {
  double score = 0.0;
  bool true_positive = false;
};

// All-points interpolated AP: area under the monotone precision envelope.
// Entries are ranked by descending score (stable). Returns 0 when num_gt = 0.
double average_precision(std::span<const RankedEntry> entries, int num_gt);

// Unweighted mean of per-category APs. Throws when the list is empty.
double mean_ap(std::span<const double> per_category_ap);

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double score = 0.0;
};

std::vector<PrPoint> precision_recall_curve(std::span<const RankedEntry> entries, int num_gt);

struct CategoryResult {
  int category = 1;
  int num_gt = 0;
  int true_positives = 0;
  int false_positives = 0;
  int ignored = 0;
  double ap = 0.0;
  std::vector<PrPoint> curve;
};

struct TauResult {
  double tau = 1.0;
  std::vector<CategoryResult> categories;  // categories with at least one ground truth
  double map = 0.0;
};

struct EvalReport {
  std::vector<TauResult> taus;
  std::string ap_protocol = "all-points-envelope";

  const TauResult* find(double tau) const;
};

inline const std::vector<double> kDefaultTaus = {0.5, 1.0, 2.0};

EvalReport evaluate_predictions(const Dataset& ground_truth, const PredictionsByImage& predictions,
                                std::span<const double> taus = kDefaultTaus);

// ---- semantic variance ---------------------------------------------------------

struct PointObjectPair {
  Point2 point;
  BoundingBox box;
};

// Pairs every point with its object's box by (image_id, object_id). Points
// without an object are skipped.
std::vector<PointObjectPair> pair_with_objects(const Dataset& dataset, const PointsByImage& points);

// ((x - xc) / w, (y - yc) / h).
Point2 relative_offset(const Point2& p, const BoundingBox& box);

struct RsvStats {
  std::optional<double> rsv;  // absent with fewer than 2 surviving points
  double var_x = 0.0;
  double var_y = 0.0;
  int used = 0;
  int wild = 0;  // points outside their box, excluded
};

// sqrt(Var(x') * Var(y')) with population variances over points inside their
// boxes.
RsvStats rsv_stats(std::span<const PointObjectPair> pairs);
std::optional<double> rsv(std::span<const PointObjectPair> pairs);

struct Heatmap {
  int bins = 0;
  std::vector<double> grid;  // row-major, row = y' bin
  int used = 0;
  int wild = 0;
  bool empty = true;

  double at(int row, int col) const { return grid[static_cast<std::size_t>(row) * bins + col]; }
};

// Normalized 2-D histogram of relative offsets over [-0.5, 0.5]^2.
Heatmap position_heatmap(std::span<const PointObjectPair> pairs, int bins);

// ---- files ---------------------------------------------------------------------

void save_predictions(const std::filesystem::path& path, const PredictionsByImage& predictions);
PredictionsByImage load_predictions(const std::filesystem::path& path);

// Metrics JSON. `extra` entries (RSV, counts, ...) are merged in as numbers.
void write_eval_report(const std::filesystem::path& path, const EvalReport& report,
                       const std::map<std::string, double>& extra = {});
void write_pr_curves(const std::filesystem::path& path, const TauResult& result);

}  // namespace cpr
