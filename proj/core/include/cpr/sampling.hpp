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
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "cpr/geometry.hpp"

namespace cpr {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// h x w x d grid of feature vectors. Row (y * w + x) of `values` holds the
// vector of cell (x, y). Cell (x, y) is centred on image pixel coordinate
// ((x + 0.5) * stride, (y + 0.5) * stride).
struct FeatureMap {
  int height = 0;
  int width = 0;
  int channels = 0;
  int stride = 1;
  RowMatrix values;

  FeatureMap() = default;
  FeatureMap(int height, int width, int channels, int stride);

  int cell_count() const { return height * width; }
  int index(int x, int y) const { return y * width + x; }
  auto cell(int x, int y) { return values.row(index(x, y)); }
  auto cell(int x, int y) const { return values.row(index(x, y)); }
};

// Extent of a feature map used by the geometric sampling routines.
struct MapExtent {
  int width = 0;
  int height = 0;

  // Points usable for bilinear sampling: [0, w-1] x [0, h-1].
  bool contains(const Point2& p) const {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= width - 1 && p.y <= height - 1;
  }
};

inline MapExtent extent_of(const FeatureMap& map) { return {map.width, map.height}; }

// Image pixel coordinates <-> feature-map coordinates at the given stride.
Point2 image_to_map(const Point2& p, int stride);
Point2 map_to_image(const Point2& p, int stride);

// Clamps a map point into the sampleable range of `extent`.
Point2 clamp_to_extent(const Point2& p, const MapExtent& extent);

enum class RegionShape { kCircle, kRectangle };

struct SampleRegion {
  RegionShape shape = RegionShape::kCircle;
  // Width:height ratio of the rectangle rings. Ignored for circles.
  double aspect_ratio = 1.0;
};

struct BagPoint {
  Point2 position;
  int ring = 1;

  friend bool operator==(const BagPoint&, const BagPoint&) = default;
};

struct PointBag {
  Point2 center;
  std::vector<BagPoint> points;
  int category = 1;
};

struct Cell {
  int x = 0;
  int y = 0;

  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct NegativeSet {
  int category = 1;
  std::vector<Cell> cells;  // row-major order
};

// r * u0 points spaced evenly on the ring of radius r around p, starting at
// angle 0 and proceeding in index order.
std::vector<Point2> circle_points(const Point2& p, int r, int u0);

// Rectangle analogue: r * u0 points evenly spaced by arc length on the
// perimeter of a rectangle with half-extents (r * sqrt(a), r / sqrt(a)).
std::vector<Point2> rectangle_points(const Point2& p, int r, int u0, double aspect_ratio);

// Union of rings r = 1..R around `a`, dropping points outside `extent`.
// Ordering is ring-ascending, then index-ascending. Throws InvalidArgument
// when `a` is outside the extent.
PointBag bag_sampling(const Point2& a, int radius, int u0, const MapExtent& extent,
                      const SampleRegion& region = {}, int category = 1);

// Integer cells farther than R from every annotated point of the category.
NegativeSet neg_sampling(std::span<const Point2> annotations, int category, double radius,
                         const MapExtent& extent);

// Bilinear corners of a point: up to four (cell row index, weight) pairs.
struct BilinearStencil {
  std::array<int, 4> rows{};
  std::array<double, 4> weights{};
};

BilinearStencil bilinear_stencil(const FeatureMap& map, const Point2& p);

// Bilinear blend of the four cells surrounding p. Exact cell value at integer
// p. Throws InvalidArgument outside [0, w-1] x [0, h-1].
Eigen::VectorXd bilinear_sample(const FeatureMap& map, const Point2& p);

// Adds the transpose of bilinear_sample: distributes `grad` onto the cells.
void bilinear_scatter(const BilinearStencil& stencil, const Eigen::Ref<const Eigen::VectorXd>& grad,
                      RowMatrix& target);

}  // namespace cpr
