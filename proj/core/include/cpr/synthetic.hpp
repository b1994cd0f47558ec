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
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cpr/dataset.hpp"

namespace cpr {

enum class ShapeFamily { kDisk, kRectangle, kRing };

std::string to_string(ShapeFamily shape);
ShapeFamily shape_family_from_string(const std::string& name);

struct CategoryStyle {
  std::array<double, 3> color{};
  ShapeFamily shape = ShapeFamily::kDisk;
};

enum class OverlapPolicy { kAllow, kNoOverlap };

struct SceneConfig {
  int width = 96;
  int height = 96;
  std::vector<CategoryStyle> categories;
  std::array<double, 3> background{0.5, 0.5, 0.5};
  int min_objects = 1;
  int max_objects = 4;
  int min_size = 8;   // pixels
  int max_size = 24;  // pixels
  OverlapPolicy overlap = OverlapPolicy::kNoOverlap;
  int placement_retries = 64;  // per object
  double noise_std = 0.05;
  std::uint64_t seed = 7;

  // Disk, rectangle and ring in red, green and blue on gray.
  static SceneConfig fixture();

  void validate() const;
};

// Smallest Euclidean RGB distance between any two category colors or the
// background.
double min_color_distance(const SceneConfig& config);

struct OracleCenter {
  int object_id = 0;
  Point2 centroid;  // mean of mask cell centers
};

struct Scene {
  ImageRecord image;
  std::vector<OracleCenter> centers;
  int requested_objects = 0;
  // Fewer objects than requested could be placed without overlap.
  bool placement_shortfall = false;
};

// Deterministic in (config.seed, index). Image id is index + 1; object ids
// count from 1 within the image.
Scene generate_scene(const SceneConfig& config, int index);

Point2 mask_centroid(const Mask& mask);

using OracleCenters = std::map<int, std::vector<OracleCenter>>;  // by image id

struct Fixture {
  Dataset dataset;
  OracleCenters centers;
  int shortfalls = 0;
};

// Scenes first_index .. first_index + n_images - 1.
Fixture generate_fixture(const SceneConfig& config, int n_images, int first_index = 0);

inline constexpr int kFixtureTrainImages = 64;
inline constexpr int kFixtureEvalImages = 16;

void save_oracle_centers(const std::filesystem::path& path, const OracleCenters& centers);
OracleCenters load_oracle_centers(const std::filesystem::path& path);

}  // namespace cpr
