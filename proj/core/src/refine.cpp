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

#include "cpr/refine.hpp"

#include <set>

#include "cpr/error.hpp"

namespace cpr {

void RefineConfig::validate() const {
  if (!(delta1 >= 0.0 && delta1 <= 1.0)) throw InvalidArgument("delta1 must be in [0, 1]");
  if (!(delta2 >= 0.0 && delta2 <= 1.0)) throw InvalidArgument("delta2 must be in [0, 1]");
  if (radius < 1 || u0 < 1) throw InvalidArgument("R and u0 must be >= 1");
}

namespace {

// True when `owner` is the nearest same-category annotation to p; exact
// distance ties go to the smaller annotation index.
bool nearest_is(const Point2& p, std::size_t owner, std::span<const Point2> positions,
                std::span<const CoarsePoint> points) {
  const int category = points[owner].category;
  const double own = squared_distance(p, positions[owner]);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i == owner || points[i].category != category) continue;
    const double other = squared_distance(p, positions[i]);
    if (other < own || (other == own && i < owner)) return false;
  }
  return true;
}

bool is_strict_argmax(const Eigen::VectorXd& scores, int k) {
  for (Eigen::Index c = 0; c < scores.size(); ++c)
    if (c != k && scores(c) >= scores(k)) return false;
  return true;
}

}  // namespace

RefinedPoint refine_point(const CprModel& model, const FeatureMap& map,
                          std::span<const CoarsePoint> points, std::size_t index,
                          const RefineConfig& config) {
  config.validate();
  if (index >= points.size()) throw InvalidArgument("refine_point: index out of range");
  const MapExtent extent = extent_of(map);
  std::vector<Point2> positions;
  positions.reserve(points.size());
  for (const auto& p : points)
    positions.push_back(clamp_to_extent(image_to_map(p.position, map.stride), extent));

  const CoarsePoint& a = points[index];
  const int k = a.category - 1;
  const Point2 center = positions[index];
  const double s_a = score_point(model, map, center)(k);

  RefinedPoint out;
  out.annotated = a.position;
  out.object_id = a.object_id;
  out.category = a.category;
  out.support.push_back({a.position, s_a});

  const PointBag bag = bag_sampling(center, config.radius, config.u0, extent, config.region, a.category);
  for (const auto& bp : bag.points) {
    const Eigen::VectorXd s = score_point(model, map, bp.position);
    const double s_p = s(k);
    if (config.score_constraint && !(s_p > config.delta1 && s_p > config.delta2 * s_a)) continue;
    if (config.class_constraint && !is_strict_argmax(s, k)) continue;
    if (config.nearest_constraint && !nearest_is(bp.position, index, positions, points)) continue;
    out.support.push_back({map_to_image(bp.position, map.stride), s_p});
  }

  if (out.support.size() == 1) {
    out.position = a.position;
    return out;
  }
  double wsum = 0.0, x = 0.0, y = 0.0;
  for (const auto& sp : out.support) {
    wsum += sp.weight;
    x += sp.weight * sp.position.x;
    y += sp.weight * sp.position.y;
  }
  out.position = {x / wsum, y / wsum};
  return out;
}

RefineResult refine_dataset(const CprModel& model, const Dataset& dataset,
                            const PointsByImage& points, const RefineConfig& config) {
  config.validate();
  RefineResult result;
  for (const auto& [image_id, list] : points) {
    const ImageRecord* image = dataset.find_image(image_id);
    if (!image) {
      for (const auto& p : list)
        result.errors.push_back({image_id, p.object_id, "point references an unknown image"});
      continue;
    }
    std::vector<CoarsePoint> valid;
    for (const auto& p : list) {
      const ObjectAnnotation* object = image->find_object(p.object_id);
      if (!object) {
        result.errors.push_back({image_id, p.object_id, "point references an unknown object"});
      } else if (p.category < 1 || p.category > model.num_categories) {
        result.errors.push_back({image_id, p.object_id, "point category outside the model range"});
      } else if (!(p.position.x >= 0 && p.position.y >= 0 && p.position.x <= image->width &&
                   p.position.y <= image->height)) {
        result.errors.push_back({image_id, p.object_id, "point lies outside its image"});
      } else {
        valid.push_back(p);
      }
    }
    auto& refined = result.points[image_id];
    ImageRefineStats stats{image_id};
    if (!valid.empty()) {
      FeatureMap map;
      try {
        map = extract_features(model, *image);
      } catch (const Error& e) {
        for (const auto& p : valid) result.errors.push_back({image_id, p.object_id, e.what()});
        continue;
      }
      for (std::size_t i = 0; i < valid.size(); ++i) {
        refined.push_back(refine_point(model, map, valid, i, config));
        stats.mean_support_size += static_cast<double>(refined.back().support.size());
        stats.mean_displacement += refined.back().displacement();
      }
      stats.points = static_cast<int>(valid.size());
      stats.mean_support_size /= stats.points;
      stats.mean_displacement /= stats.points;
    }
    result.stats.push_back(stats);
  }
  return result;
}

PointFile to_point_file(const RefineResult& result, double sigma, std::uint64_t seed) {
  PointFile file{sigma, seed, {}};
  for (const auto& [image_id, list] : result.points) {
    for (const auto& p : list) {
      PointRecord r;
      r.image_id = image_id;
      r.object_id = p.object_id;
      r.x = p.position.x;
      r.y = p.position.y;
      r.category = p.category;
      r.displacement = p.displacement();
      r.support_size = static_cast<int>(p.support.size());
      file.points.push_back(r);
    }
  }
  return file;
}

PointsByImage to_coarse_points(const RefineResult& result) {
  PointsByImage out;
  for (const auto& [image_id, list] : result.points) {
    auto& dst = out[image_id];
    for (const auto& p : list) dst.push_back({p.position, p.category, p.object_id, false});
  }
  return out;
}

}  // namespace cpr
