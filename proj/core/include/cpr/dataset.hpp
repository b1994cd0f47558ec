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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "cpr/geometry.hpp"
#include "cpr/image.hpp"

namespace cpr {

// Binary grid aligned to image pixels (row-major). Cell (row, col) is the
// pixel square [col, col + 1) x [row, row + 1).
class Mask {
 public:
  Mask() = default;
  Mask(int width, int height);

  int width() const { return width_; }
  int height() const { return height_; }

  bool at(int row, int col) const { return cells_[index(row, col)] != 0; }
  void set(int row, int col, bool value = true) { cells_[index(row, col)] = value ? 1 : 0; }

  // True when the pixel containing p is set; false outside the grid.
  bool contains(const Point2& p) const;
  std::size_t count() const;

  // Center of the set cell nearest to p (row-major scan order breaks ties).
  // Requires count() > 0.
  Point2 nearest_cell_center(const Point2& p) const;

  // Uncompressed COCO-style run lengths: column-major order, alternating runs
  // that start with unset cells.
  std::vector<std::int64_t> to_rle() const;
  static Mask from_rle(int width, int height, const std::vector<std::int64_t>& counts);

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width_ + col;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> cells_;
};

struct ObjectAnnotation {
  int object_id = 0;
  int category = 1;  // 1..K
  BoundingBox box;
  std::optional<Mask> mask;
  bool ignore = false;
};

struct ImageRecord {
  int image_id = 0;
  int width = 0;
  int height = 0;
  Image pixels;
  std::vector<ObjectAnnotation> objects;
  // Where the pixels came from, relative to the dataset file. Empty when the
  // pixels were stored inline.
  std::string pixels_path;

  const ObjectAnnotation* find_object(int object_id) const;
};

struct Dataset {
  std::vector<ImageRecord> images;
  int num_categories = 1;
  // Original category ids in contiguous order: category k maps to
  // source_category_ids[k - 1]. Empty when the file used 1..K directly.
  std::vector<int> source_category_ids;

  const ImageRecord* find_image(int image_id) const;
};

// A synthesized or human-provided point label for one object.
struct CoarsePoint {
  Point2 position;
  int category = 1;  // 1..K
  int object_id = 0;
  // Rejection sampling gave up and the nearest mask cell was used instead.
  bool fallback = false;

  Eigen::VectorXd category_onehot(int num_categories) const;
};

using PointsByImage = std::map<int, std::vector<CoarsePoint>>;

// ---- dataset files -------------------------------------------------------

// Loads and validates a dataset JSON file. Boxes are clipped to the image
// extent and category ids are remapped to 1..K. Throws LoadError naming the
// offending image/object.
Dataset load_dataset(const std::filesystem::path& path);

struct SaveOptions {
  // Write referenced pixel files (PPM) next to the JSON as well.
  bool write_images = true;
};

// Canonical writer: sorted keys, shortest round-trip number formatting.
void save_dataset(const std::filesystem::path& path, const Dataset& dataset,
                  const SaveOptions& options = {});

// Checks every dataset invariant; throws LoadError on the first violation.
void validate_dataset(const Dataset& dataset);

// ---- point annotation files ----------------------------------------------

struct PointRecord {
  int image_id = 0;
  int object_id = 0;
  double x = 0.0;
  double y = 0.0;
  int category = 1;
  bool fallback = false;
  // Present in refined-point files only.
  std::optional<double> displacement;
  std::optional<int> support_size;
};

struct PointFile {
  double sigma = 0.0;
  std::uint64_t seed = 0;
  std::vector<PointRecord> points;
};

PointFile load_points(const std::filesystem::path& path);
void save_points(const std::filesystem::path& path, const PointFile& file);

PointsByImage group_points(const PointFile& file);
PointFile make_point_file(const PointsByImage& points, double sigma, std::uint64_t seed);

// ---- rectified Gaussian annotation synthesis -------------------------------

inline constexpr int kMaxRejectionRetries = 1024;

// Draws a point from a Gaussian centred on the box with per-axis standard
// deviation sigma * width (sigma * height), restricted to the object mask (or
// the box when there is no mask) by rejection. Deterministic in rng_seed.
CoarsePoint sample_coarse_point(const ObjectAnnotation& object, double sigma,
                                std::uint64_t rng_seed);

// One point per non-ignore object. The stream for each object is derived from
// (seed, image_id, object_id), so the result is independent of iteration order.
PointsByImage sample_dataset_points(const Dataset& dataset, double sigma, std::uint64_t seed);

}  // namespace cpr
