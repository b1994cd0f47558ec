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

#include "cpr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "cpr/error.hpp"
#include "json.hpp"

namespace cpr {

using nlohmann::json;

double point_box_distance(const Point2& p, const BoundingBox& b) {
  if (!(b.width > 0.0) || !(b.height > 0.0))
    throw InvalidArgument("point_box_distance: degenerate box");
  const double dx = (p.x - b.center_x) / b.width;
  const double dy = (p.y - b.center_y) / b.height;
  return std::sqrt(dx * dx + dy * dy);
}

int MatchLedger::true_positives() const {
  return static_cast<int>(std::count_if(predictions.begin(), predictions.end(), [](const auto& p) {
    return p.outcome == Outcome::kTruePositive;
  }));
}

int MatchLedger::false_positives() const {
  return static_cast<int>(std::count_if(predictions.begin(), predictions.end(), [](const auto& p) {
    return p.outcome == Outcome::kFalsePositive;
  }));
}

int MatchLedger::ignored() const {
  return static_cast<int>(std::count_if(predictions.begin(), predictions.end(), [](const auto& p) {
    return p.outcome == Outcome::kIgnored;
  }));
}

namespace {

std::vector<std::size_t> score_order(std::span<const PredictedPoint> preds) {
  std::vector<std::size_t> order(preds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return preds[a].score > preds[b].score; });
  return order;
}

}  // namespace

MatchLedger match_predictions(std::span<const PredictedPoint> preds,
                              std::span<const ObjectAnnotation> gts, double tau) {
  MatchLedger ledger;
  ledger.predictions.resize(preds.size());
  ledger.gt_matched.assign(gts.size(), false);
  for (std::size_t pi : score_order(preds)) {
    const auto& pred = preds[pi];
    int best = -1, best_ignore = -1;
    double best_d = 0.0, best_ignore_d = 0.0;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      const auto& gt = gts[gi];
      if (gt.category != pred.category) continue;
      const double d = point_box_distance(pred.position, gt.box);
      if (d > tau) continue;
      if (gt.ignore) {
        if (best_ignore < 0 || d < best_ignore_d) {
          best_ignore = static_cast<int>(gi);
          best_ignore_d = d;
        }
      } else if (!ledger.gt_matched[gi] && (best < 0 || d < best_d)) {
        best = static_cast<int>(gi);
        best_d = d;
      }
    }
    auto& outcome = ledger.predictions[pi];
    if (best >= 0) {
      outcome = {Outcome::kTruePositive, best};
      ledger.gt_matched[best] = true;
    } else if (best_ignore >= 0) {
      outcome = {Outcome::kIgnored, best_ignore};
    } else {
      outcome = {Outcome::kFalsePositive, -1};
    }
  }
  return ledger;
}

namespace {

std::vector<RankedEntry> ranked(std::span<const RankedEntry> entries) {
  std::vector<RankedEntry> sorted(entries.begin(), entries.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
  return sorted;
}

}  // namespace

std::vector<PrPoint> precision_recall_curve(std::span<const RankedEntry> entries, int num_gt) {
  std::vector<PrPoint> curve;
  int tp = 0, fp = 0;
  for (const auto& e : ranked(entries)) {
    (e.true_positive ? tp : fp) += 1;
    curve.push_back({num_gt > 0 ? static_cast<double>(tp) / num_gt : 0.0,
                     static_cast<double>(tp) / (tp + fp), e.score});
  }
  return curve;
}

double average_precision(std::span<const RankedEntry> entries, int num_gt) {
  if (num_gt < 0) throw InvalidArgument("average_precision: num_gt must be >= 0");
  if (num_gt == 0) return 0.0;
  const auto curve = precision_recall_curve(entries, num_gt);
  // Envelope: precision at rank i replaced by the max precision at ranks >= i.
  std::vector<double> envelope(curve.size());
  double running = 0.0;
  for (std::size_t i = curve.size(); i-- > 0;) {
    running = std::max(running, curve[i].precision);
    envelope[i] = running;
  }
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    ap += (curve[i].recall - prev_recall) * envelope[i];
    prev_recall = curve[i].recall;
  }
  return ap;
}

double mean_ap(std::span<const double> per_category_ap) {
  if (per_category_ap.empty()) throw InvalidArgument("mean_ap: need at least one category");
  return std::accumulate(per_category_ap.begin(), per_category_ap.end(), 0.0) /
         static_cast<double>(per_category_ap.size());
}

const TauResult* EvalReport::find(double tau) const {
  for (const auto& t : taus)
    if (t.tau == tau) return &t;
  return nullptr;
}

EvalReport evaluate_predictions(const Dataset& ground_truth, const PredictionsByImage& predictions,
                                std::span<const double> taus) {
  EvalReport report;
  const int K = ground_truth.num_categories;
  for (double tau : taus) {
    TauResult tr;
    tr.tau = tau;
    std::vector<std::vector<RankedEntry>> entries(K);
    std::vector<CategoryResult> cats(K);
    for (int k = 0; k < K; ++k) cats[k].category = k + 1;
    for (const auto& image : ground_truth.images) {
      for (const auto& o : image.objects)
        if (!o.ignore) cats[o.category - 1].num_gt += 1;
      auto it = predictions.find(image.image_id);
      if (it == predictions.end()) continue;
      const auto& preds = it->second;
      const MatchLedger ledger = match_predictions(preds, image.objects, tau);
      for (std::size_t i = 0; i < preds.size(); ++i) {
        const int k = preds[i].category - 1;
        if (k < 0 || k >= K) throw InvalidArgument("prediction category outside 1..K");
        switch (ledger.predictions[i].outcome) {
          case Outcome::kTruePositive:
            cats[k].true_positives += 1;
            entries[k].push_back({preds[i].score, true});
            break;
          case Outcome::kFalsePositive:
            cats[k].false_positives += 1;
            entries[k].push_back({preds[i].score, false});
            break;
          case Outcome::kIgnored:
            cats[k].ignored += 1;
            break;
        }
      }
    }
    std::vector<double> aps;
    for (int k = 0; k < K; ++k) {
      if (cats[k].num_gt == 0) continue;
      cats[k].ap = average_precision(entries[k], cats[k].num_gt);
      cats[k].curve = precision_recall_curve(entries[k], cats[k].num_gt);
      aps.push_back(cats[k].ap);
      tr.categories.push_back(std::move(cats[k]));
    }
    tr.map = aps.empty() ? 0.0 : mean_ap(aps);
    report.taus.push_back(std::move(tr));
  }
  return report;
}

// ---- semantic variance -----------------------------------------------------------

std::vector<PointObjectPair> pair_with_objects(const Dataset& dataset, const PointsByImage& points) {
  std::vector<PointObjectPair> pairs;
  for (const auto& [image_id, list] : points) {
    const ImageRecord* image = dataset.find_image(image_id);
    if (!image) continue;
    for (const auto& p : list)
      if (const ObjectAnnotation* o = image->find_object(p.object_id))
        pairs.push_back({p.position, o->box});
  }
  return pairs;
}

Point2 relative_offset(const Point2& p, const BoundingBox& box) {
  return {(p.x - box.center_x) / box.width, (p.y - box.center_y) / box.height};
}

namespace {

bool inside_unit_box(const Point2& r) { return std::abs(r.x) <= 0.5 && std::abs(r.y) <= 0.5; }

}  // namespace

RsvStats rsv_stats(std::span<const PointObjectPair> pairs) {
  RsvStats out;
  std::vector<Point2> rel;
  for (const auto& pr : pairs) {
    const Point2 r = relative_offset(pr.point, pr.box);
    if (inside_unit_box(r))
      rel.push_back(r);
    else
      ++out.wild;
  }
  out.used = static_cast<int>(rel.size());
  if (rel.size() < 2) return out;
  const double n = static_cast<double>(rel.size());
  double mx = 0.0, my = 0.0;
  for (const auto& r : rel) {
    mx += r.x;
    my += r.y;
  }
  mx /= n;
  my /= n;
  for (const auto& r : rel) {
    out.var_x += (r.x - mx) * (r.x - mx);
    out.var_y += (r.y - my) * (r.y - my);
  }
  out.var_x /= n;
  out.var_y /= n;
  out.rsv = std::sqrt(out.var_x * out.var_y);
  return out;
}

std::optional<double> rsv(std::span<const PointObjectPair> pairs) { return rsv_stats(pairs).rsv; }

Heatmap position_heatmap(std::span<const PointObjectPair> pairs, int bins) {
  if (bins < 1) throw InvalidArgument("position_heatmap: bins must be >= 1");
  Heatmap h;
  h.bins = bins;
  h.grid.assign(static_cast<std::size_t>(bins) * bins, 0.0);
  for (const auto& pr : pairs) {
    const Point2 r = relative_offset(pr.point, pr.box);
    if (!inside_unit_box(r)) {
      ++h.wild;
      continue;
    }
    const int col = std::min(bins - 1, static_cast<int>(std::floor((r.x + 0.5) * bins)));
    const int row = std::min(bins - 1, static_cast<int>(std::floor((r.y + 0.5) * bins)));
    h.grid[static_cast<std::size_t>(row) * bins + col] += 1.0;
    ++h.used;
  }
  h.empty = h.used == 0;
  if (!h.empty)
    for (double& v : h.grid) v /= h.used;
  return h;
}

// ---- files ---------------------------------------------------------------------

void save_predictions(const std::filesystem::path& path, const PredictionsByImage& predictions) {
  json arr = json::array();
  for (const auto& [image_id, list] : predictions)
    for (const auto& p : list)
      arr.push_back({{"image_id", image_id}, {"x", p.position.x}, {"y", p.position.y},
                     {"category", p.category}, {"score", p.score}});
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << arr.dump(2) << '\n';
}

PredictionsByImage load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  PredictionsByImage out;
  try {
    const json arr = json::parse(in);
    if (!arr.is_array()) throw LoadError("predictions file must hold a JSON array");
    for (const auto& j : arr)
      out[j.at("image_id").get<int>()].push_back(
          {{j.at("x").get<double>(), j.at("y").get<double>()}, j.at("category").get<int>(),
           j.at("score").get<double>()});
  } catch (const json::exception& e) {
    throw LoadError("malformed predictions file " + path.string() + ": " + e.what());
  }
  return out;
}

void write_eval_report(const std::filesystem::path& path, const EvalReport& report,
                       const std::map<std::string, double>& extra) {
  json j;
  j["ap_protocol"] = report.ap_protocol;
  json taus = json::array();
  for (const auto& t : report.taus) {
    json jt;
    jt["tau"] = t.tau;
    jt["mAP"] = t.map;
    json cats = json::array();
    for (const auto& c : t.categories)
      cats.push_back({{"category", c.category}, {"ap", c.ap}, {"num_gt", c.num_gt},
                      {"tp", c.true_positives}, {"fp", c.false_positives}, {"ignored", c.ignored}});
    jt["categories"] = std::move(cats);
    taus.push_back(std::move(jt));
  }
  j["taus"] = std::move(taus);
  for (const auto& [key, value] : extra) j[key] = value;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_pr_curves(const std::filesystem::path& path, const TauResult& result) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "category,rank,score,recall,precision\n" << std::setprecision(17);
  for (const auto& c : result.categories)
    for (std::size_t i = 0; i < c.curve.size(); ++i)
      out << c.category << ',' << i + 1 << ',' << c.curve[i].score << ',' << c.curve[i].recall << ','
          << c.curve[i].precision << '\n';
}

}  // namespace cpr
