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

#include "cpr/synthetic.hpp"

#include <algorithm>
#include <cmath>

#include "config_json.hpp"
#include "cpr/error.hpp"
#include "cpr/rng.hpp"

namespace cpr {

std::string to_string(ShapeFamily shape) {
  switch (shape) {
    case ShapeFamily::kDisk:
      return "disk";
    case ShapeFamily::kRectangle:
      return "rectangle";
    case ShapeFamily::kRing:
      return "ring";
  }
  return "disk";
}

ShapeFamily shape_family_from_string(const std::string& name) {
  if (name == "disk") return ShapeFamily::kDisk;
  if (name == "rectangle") return ShapeFamily::kRectangle;
  if (name == "ring") return ShapeFamily::kRing;
  throw InvalidArgument("unknown shape family '" + name + "'");
}

SceneConfig SceneConfig::fixture() {
  SceneConfig c;
  c.categories = {{{0.85, 0.20, 0.20}, ShapeFamily::kDisk},
                  {{0.20, 0.75, 0.25}, ShapeFamily::kRectangle},
                  {{0.20, 0.30, 0.85}, ShapeFamily::kRing}};
  return c;
}

double min_color_distance(const SceneConfig& config) {
  std::vector<std::array<double, 3>> colors{config.background};
  for (const auto& c : config.categories) colors.push_back(c.color);
  double best = INFINITY;
  for (std::size_t i = 0; i < colors.size(); ++i)
    for (std::size_t j = i + 1; j < colors.size(); ++j)
      best = std::min(best, std::sqrt(std::pow(colors[i][0] - colors[j][0], 2) +
                                      std::pow(colors[i][1] - colors[j][1], 2) +
                                      std::pow(colors[i][2] - colors[j][2], 2)));
  return best;
}

void SceneConfig::validate() const {
  if (width < 1 || height < 1) throw InvalidArgument("scene: image size must be positive");
  if (categories.empty() || categories.size() > 32) throw InvalidArgument("scene: need 1..32 categories");
  auto in_unit = [](const std::array<double, 3>& c) {
    return std::all_of(c.begin(), c.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  };
  if (!in_unit(background)) throw InvalidArgument("scene: background color outside [0, 1]");
  for (const auto& c : categories)
    if (!in_unit(c.color)) throw InvalidArgument("scene: category color outside [0, 1]");
  if (min_color_distance(*this) < 0.2) throw InvalidArgument("scene: colors closer than 0.2");
  if (min_objects < 0 || max_objects < min_objects) throw InvalidArgument("scene: bad object count range");
  if (min_size < 4 || max_size < min_size) throw InvalidArgument("scene: sizes must satisfy 4 <= min <= max");
  if (max_size > std::min(width, height)) throw InvalidArgument("scene: max_size exceeds the image");
  if (placement_retries < 1) throw InvalidArgument("scene: placement_retries must be >= 1");
  if (!(noise_std >= 0.0)) throw InvalidArgument("scene: noise_std must be >= 0");
}

Point2 mask_centroid(const Mask& mask) {
  double x = 0.0, y = 0.0;
  std::size_t n = 0;
  for (int r = 0; r < mask.height(); ++r)
    for (int c = 0; c < mask.width(); ++c)
      if (mask.at(r, c)) {
        x += c + 0.5;
        y += r + 0.5;
        ++n;
      }
  if (n == 0) throw InvalidArgument("mask_centroid: empty mask");
  return {x / static_cast<double>(n), y / static_cast<double>(n)};
}

namespace {

struct Placed {
  int category = 1;
  Mask mask;
  BoundingBox reserved;  // outer extent used for overlap tests
};

Mask rasterize(const SceneConfig& cfg, ShapeFamily shape, const Point2& c, double w, double h) {
  Mask m(cfg.width, cfg.height);
  const double r_out = 0.5 * w;
  const double r_in = 0.45 * r_out;
  for (int row = 0; row < cfg.height; ++row) {
    for (int col = 0; col < cfg.width; ++col) {
      const Point2 p{col + 0.5, row + 0.5};
      bool on = false;
      switch (shape) {
        case ShapeFamily::kDisk:
          on = distance(p, c) <= r_out;
          break;
        case ShapeFamily::kRectangle:
          on = std::abs(p.x - c.x) <= 0.5 * w && std::abs(p.y - c.y) <= 0.5 * h;
          break;
        case ShapeFamily::kRing: {
          const double d = distance(p, c);
          on = d <= r_out && d > r_in;
          break;
        }
      }
      if (on) m.set(row, col);
    }
  }
  return m;
}

BoundingBox tight_box(const Mask& m) {
  int r0 = m.height(), r1 = -1, c0 = m.width(), c1 = -1;
  for (int r = 0; r < m.height(); ++r)
    for (int c = 0; c < m.width(); ++c)
      if (m.at(r, c)) {
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
      }
  return BoundingBox::from_corners(c0, r0, c1 + 1, r1 + 1);
}

bool boxes_touch(const BoundingBox& a, const BoundingBox& b, double margin) {
  return a.left() - margin < b.right() && b.left() - margin < a.right() &&
         a.top() - margin < b.bottom() && b.top() - margin < a.bottom();
}

}  // namespace

Scene generate_scene(const SceneConfig& config, int index) {
  config.validate();
  if (index < 0) throw InvalidArgument("generate_scene: index must be >= 0");
  Rng rng(derive_seed({config.seed, static_cast<std::uint64_t>(index)}));
  Scene scene;
  scene.requested_objects = static_cast<int>(rng.uniform_int(config.min_objects, config.max_objects));
  const int num_categories = static_cast<int>(config.categories.size());

  std::vector<Placed> placed;
  for (int n = 0; n < scene.requested_objects; ++n) {
    bool ok = false;
    for (int attempt = 0; attempt < config.placement_retries && !ok; ++attempt) {
      const int category = static_cast<int>(rng.uniform_int(1, num_categories));
      const ShapeFamily shape = config.categories[category - 1].shape;
      const double w = static_cast<double>(rng.uniform_int(config.min_size, config.max_size));
      const double h = shape == ShapeFamily::kRectangle
                           ? static_cast<double>(rng.uniform_int(config.min_size, config.max_size))
                           : w;
      const Point2 c{rng.uniform(0.5 * w, config.width - 0.5 * w),
                     rng.uniform(0.5 * h, config.height - 0.5 * h)};
      const BoundingBox extent{c.x, c.y, w, h};
      if (config.overlap == OverlapPolicy::kNoOverlap &&
          std::any_of(placed.begin(), placed.end(),
                      [&](const Placed& p) { return boxes_touch(p.reserved, extent, 1.0); }))
        continue;
      Mask mask = rasterize(config, shape, c, w, h);
      if (mask.count() == 0) continue;
      placed.push_back({category, std::move(mask), extent});
      ok = true;
    }
    if (!ok) scene.placement_shortfall = true;
  }

  // Later objects paint over earlier ones; masks keep only visible cells.
  for (std::size_t i = 0; i < placed.size(); ++i)
    for (std::size_t j = i + 1; j < placed.size(); ++j)
      for (int r = 0; r < config.height; ++r)
        for (int c = 0; c < config.width; ++c)
          if (placed[j].mask.at(r, c)) placed[i].mask.set(r, c, false);

  ImageRecord& image = scene.image;
  image.image_id = index + 1;
  image.width = config.width;
  image.height = config.height;
  image.pixels = Image(config.width, config.height);
  for (int r = 0; r < config.height; ++r)
    for (int c = 0; c < config.width; ++c) image.pixels.set_rgb(r, c, config.background);
  int object_id = 0;
  for (const auto& p : placed) {
    if (p.mask.count() == 0) {
      scene.placement_shortfall = true;
      continue;
    }
    const auto& color = config.categories[p.category - 1].color;
    for (int r = 0; r < config.height; ++r)
      for (int c = 0; c < config.width; ++c)
        if (p.mask.at(r, c)) image.pixels.set_rgb(r, c, color);
    ObjectAnnotation o;
    o.object_id = ++object_id;
    o.category = p.category;
    o.box = tight_box(p.mask);
    o.mask = p.mask;
    scene.centers.push_back({o.object_id, mask_centroid(p.mask)});
    image.objects.push_back(std::move(o));
  }
  if (config.noise_std > 0.0)
    for (double& v : image.pixels.data()) v = std::clamp(v + config.noise_std * rng.normal(), 0.0, 1.0);
  image.pixels = quantize_8bit(image.pixels);
  return scene;
}

Fixture generate_fixture(const SceneConfig& config, int n_images, int first_index) {
  if (n_images < 0 || first_index < 0) throw InvalidArgument("generate_fixture: negative count or index");
  config.validate();
  Fixture f;
  f.dataset.num_categories = static_cast<int>(config.categories.size());
  for (int i = 0; i < n_images; ++i) {
    Scene s = generate_scene(config, first_index + i);
    if (s.placement_shortfall) ++f.shortfalls;
    f.centers[s.image.image_id] = std::move(s.centers);
    s.image.pixels_path = "images/" + std::to_string(s.image.image_id) + ".ppm";
    f.dataset.images.push_back(std::move(s.image));
  }
  return f;
}

void save_oracle_centers(const std::filesystem::path& path, const OracleCenters& centers) {
  detail::json images = detail::json::array();
  for (const auto& [image_id, list] : centers) {
    detail::json objects = detail::json::array();
    for (const auto& c : list)
      objects.push_back({{"object_id", c.object_id}, {"x", c.centroid.x}, {"y", c.centroid.y}});
    images.push_back({{"image_id", image_id}, {"centers", objects}});
  }
  detail::write_json(path, {{"format", "cprlite-oracle-centers"}, {"images", images}});
}

OracleCenters load_oracle_centers(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  OracleCenters out;
  try {
    for (const auto& image : j.at("images")) {
      auto& list = out[image.at("image_id").get<int>()];
      for (const auto& c : image.at("centers"))
        list.push_back({c.at("object_id").get<int>(), {c.at("x").get<double>(), c.at("y").get<double>()}});
    }
  } catch (const detail::json::exception& e) {
    throw LoadError("malformed oracle centers " + path.string() + ": " + e.what());
  }
  return out;
}

}  // namespace cpr
