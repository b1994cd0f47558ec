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

#include <cmath>
#include <compare>

namespace cpr {

// A 2-D point. Image-space points use continuous pixel coordinates: pixel
// (col, row) covers [col, col + 1) x [row, row + 1), so its center is at
// (col + 0.5, row + 0.5).
struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend auto operator<=>(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline double squared_distance(const Point2& a, const Point2& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  return dx * dx + dy * dy;
}

// Axis-aligned box in center/size form.
struct BoundingBox {
  double center_x = 0.0;
  double center_y = 0.0;
  double width = 0.0;
  double height = 0.0;

  double left() const { return center_x - 0.5 * width; }
  double right() const { return center_x + 0.5 * width; }
  double top() const { return center_y - 0.5 * height; }
  double bottom() const { return center_y + 0.5 * height; }
  Point2 center() const { return {center_x, center_y}; }

  // Closed containment.
  bool contains(const Point2& p) const {
    return p.x >= left() && p.x <= right() && p.y >= top() && p.y <= bottom();
  }

  static BoundingBox from_corners(double x0, double y0, double x1, double y1) {
    return {0.5 * (x0 + x1), 0.5 * (y0 + y1), x1 - x0, y1 - y0};
  }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

}  // namespace cpr
