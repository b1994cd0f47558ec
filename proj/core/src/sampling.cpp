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

#include "cpr/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cpr/error.hpp"

namespace cpr {

FeatureMap::FeatureMap(int h, int w, int d, int s)
    : height(h), width(w), channels(d), stride(s), values(RowMatrix::Zero(h * w, d)) {
  if (h <= 0 || w <= 0 || d <= 0 || s < 1) throw InvalidArgument("invalid feature map shape");
}

Point2 image_to_map(const Point2& p, int stride) {
  return {p.x / stride - 0.5, p.y / stride - 0.5};
}

Point2 map_to_image(const Point2& p, int stride) {
  return {(p.x + 0.5) * stride, (p.y + 0.5) * stride};
}

Point2 clamp_to_extent(const Point2& p, const MapExtent& extent) {
  return {std::clamp(p.x, 0.0, static_cast<double>(extent.width - 1)),
          std::clamp(p.y, 0.0, static_cast<double>(extent.height - 1))};
}

std::vector<Point2> circle_points(const Point2& p, int r, int u0) {
  if (r < 1 || u0 < 1) throw InvalidArgument("circle_points: r and u0 must be >= 1");
  const int n = r * u0;
  std::vector<Point2> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * i / n;
    out.push_back({p.x + r * std::cos(angle), p.y + r * std::sin(angle)});
  }
  return out;
}

std::vector<Point2> rectangle_points(const Point2& p, int r, int u0, double aspect_ratio) {
  if (r < 1 || u0 < 1) throw InvalidArgument("rectangle_points: r and u0 must be >= 1");
  if (!(aspect_ratio > 0.0)) throw InvalidArgument("rectangle_points: aspect ratio must be > 0");
  const double hw = r * std::sqrt(aspect_ratio);
  const double hh = r / std::sqrt(aspect_ratio);
  const double perimeter = 4.0 * (hw + hh);
  const int n = r * u0;
  std::vector<Point2> out;
  out.reserve(n);
  // Walk the perimeter counter-clockwise (in the x-right, y-down frame the
  // same orientation as circle_points) starting from (hw, 0).
  for (int i = 0; i < n; ++i) {
    double s = perimeter * i / n;
    Point2 q;
    if (s < hh) {
      q = {hw, s};
    } else if ((s -= hh) < 2 * hw) {
      q = {hw - s, hh};
    } else if ((s -= 2 * hw) < 2 * hh) {
      q = {-hw, hh - s};
    } else if ((s -= 2 * hh) < 2 * hw) {
      q = {-hw + s, -hh};
    } else {
      s -= 2 * hw;
      q = {hw, -hh + s};
    }
    out.push_back({p.x + q.x, p.y + q.y});
  }
  return out;
}

PointBag bag_sampling(const Point2& a, int radius, int u0, const MapExtent& extent,
                      const SampleRegion& region, int category) {
  if (radius < 1) throw InvalidArgument("bag_sampling: R must be >= 1");
  if (!extent.contains(a)) throw InvalidArgument("bag_sampling: annotated point outside the map");
  PointBag bag;
  bag.center = a;
  bag.category = category;
  bag.points.reserve(static_cast<std::size_t>(u0) * radius * (radius + 1) / 2);
  for (int r = 1; r <= radius; ++r) {
    const auto ring = region.shape == RegionShape::kCircle
                          ? circle_points(a, r, u0)
                          : rectangle_points(a, r, u0, region.aspect_ratio);
    for (const auto& p : ring)
      if (extent.contains(p)) bag.points.push_back({p, r});
  }
  return bag;
}

NegativeSet neg_sampling(std::span<const Point2> annotations, int category, double radius,
                         const MapExtent& extent) {
  if (!(radius >= 1.0)) throw InvalidArgument("neg_sampling: R must be >= 1");
  NegativeSet out;
  out.category = category;
  const double r2 = radius * radius;
  for (int y = 0; y < extent.height; ++y) {
    for (int x = 0; x < extent.width; ++x) {
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      const bool far = std::all_of(annotations.begin(), annotations.end(),
                                   [&](const Point2& a) { return squared_distance(p, a) > r2; });
      if (far) out.cells.push_back({x, y});
    }
  }
  return out;
}

BilinearStencil bilinear_stencil(const FeatureMap& map, const Point2& p) {
  if (!extent_of(map).contains(p))
    throw InvalidArgument("bilinear_sample: point (" + std::to_string(p.x) + ", " +
                          std::to_string(p.y) + ") outside the sampleable range");
  const int x0 = std::min(static_cast<int>(std::floor(p.x)), map.width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(p.y)), map.height - 1);
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double fx = p.x - x0;
  const double fy = p.y - y0;
  BilinearStencil s;
  s.rows = {map.index(x0, y0), map.index(x1, y0), map.index(x0, y1), map.index(x1, y1)};
  s.weights = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  return s;
}

Eigen::VectorXd bilinear_sample(const FeatureMap& map, const Point2& p) {
  const auto s = bilinear_stencil(map, p);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(map.channels);
  for (int i = 0; i < 4; ++i)
    if (s.weights[i] != 0.0) out += s.weights[i] * map.values.row(s.rows[i]).transpose();
  return out;
}

void bilinear_scatter(const BilinearStencil& stencil, const Eigen::Ref<const Eigen::VectorXd>& grad,
                      RowMatrix& target) {
  for (int i = 0; i < 4; ++i)
    if (stencil.weights[i] != 0.0)
      target.row(stencil.rows[i]) += stencil.weights[i] * grad.transpose();
}

}  // namespace cpr
