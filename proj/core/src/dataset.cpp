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

#include "cpr/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "cpr/error.hpp"
#include "cpr/rng.hpp"
#include "json.hpp"

namespace cpr {

using nlohmann::json;

// ---- Mask ------------------------------------------------------------------

Mask::Mask(int width, int height)
    : width_(width), height_(height), cells_(static_cast<std::size_t>(width) * height, 0) {
  if (width < 0 || height < 0) throw InvalidArgument("negative mask size");
}

bool Mask::contains(const Point2& p) const {
  if (!(p.x >= 0.0 && p.y >= 0.0)) return false;
  const auto col = static_cast<long>(std::floor(p.x));
  const auto row = static_cast<long>(std::floor(p.y));
  if (col >= width_ || row >= height_) return false;
  return at(static_cast<int>(row), static_cast<int>(col));
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(cells_.begin(), cells_.end(), std::uint8_t{1}));
}

Point2 Mask::nearest_cell_center(const Point2& p) const {
  double best = std::numeric_limits<double>::infinity();
  Point2 best_point{};
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      if (!at(r, c)) continue;
      const Point2 center{c + 0.5, r + 0.5};
      const double d = squared_distance(center, p);
      if (d < best) {
        best = d;
        best_point = center;
      }
    }
  }
  if (!std::isfinite(best)) throw InvalidArgument("nearest_cell_center on an empty mask");
  return best_point;
}

std::vector<std::int64_t> Mask::to_rle() const {
  std::vector<std::int64_t> counts;
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (int c = 0; c < width_; ++c) {
    for (int r = 0; r < height_; ++r) {
      const std::uint8_t v = cells_[index(r, c)];
      if (v != current) {
        counts.push_back(run);
        run = 0;
        current = v;
      }
      ++run;
    }
  }
  counts.push_back(run);
  return counts;
}

Mask Mask::from_rle(int width, int height, const std::vector<std::int64_t>& counts) {
  Mask mask(width, height);
  const std::int64_t total = static_cast<std::int64_t>(width) * height;
  std::int64_t pos = 0;
  bool value = false;
  for (auto n : counts) {
    if (n < 0 || pos + n > total) throw LoadError("mask RLE overruns the image");
    for (std::int64_t i = 0; i < n; ++i, ++pos) {
      if (value) {
        const auto c = static_cast<int>(pos / height);
        const auto r = static_cast<int>(pos % height);
        mask.set(r, c);
      }
    }
    value = !value;
  }
  if (pos != total) throw LoadError("mask RLE does not cover the image");
  return mask;
}

// ---- records ---------------------------------------------------------------

const ObjectAnnotation* ImageRecord::find_object(int object_id) const {
  for (const auto& o : objects)
    if (o.object_id == object_id) return &o;
  return nullptr;
}

const ImageRecord* Dataset::find_image(int image_id) const {
  for (const auto& im : images)
    if (im.image_id == image_id) return &im;
  return nullptr;
}

Eigen::VectorXd CoarsePoint::category_onehot(int num_categories) const {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(num_categories);
  v(category - 1) = 1.0;
  return v;
}

// ---- validation ------------------------------------------------------------

namespace {

std::string where(int image_id) { return "image " + std::to_string(image_id); }
std::string where(int image_id, int object_id) {
  return "image " + std::to_string(image_id) + ", object " + std::to_string(object_id);
}

constexpr double kBoxTolerance = 1e-6;

void validate_object(const ImageRecord& image, const ObjectAnnotation& o, int num_categories) {
  const auto& b = o.box;
  if (!(std::isfinite(b.center_x) && std::isfinite(b.center_y) && std::isfinite(b.width) &&
        std::isfinite(b.height)))
    throw LoadError(where(image.image_id, o.object_id) + ": non-finite box");
  if (b.width <= 0.0 || b.height <= 0.0)
    throw LoadError(where(image.image_id, o.object_id) + ": degenerate box (w<=0 or h<=0)");
  if (o.category < 1 || o.category > num_categories)
    throw LoadError(where(image.image_id, o.object_id) + ": category outside 1.." +
                    std::to_string(num_categories));
  if (b.left() < -kBoxTolerance || b.top() < -kBoxTolerance ||
      b.right() > image.width + kBoxTolerance || b.bottom() > image.height + kBoxTolerance)
    throw LoadError(where(image.image_id, o.object_id) + ": box outside the image");
  if (!o.mask) return;
  const Mask& m = *o.mask;
  if (m.width() != image.width || m.height() != image.height)
    throw LoadError(where(image.image_id, o.object_id) + ": mask size differs from image");
  std::size_t set = 0;
  for (int r = 0; r < m.height(); ++r) {
    for (int c = 0; c < m.width(); ++c) {
      if (!m.at(r, c)) continue;
      ++set;
      if (c < b.left() - kBoxTolerance || c + 1 > b.right() + kBoxTolerance ||
          r < b.top() - kBoxTolerance || r + 1 > b.bottom() + kBoxTolerance)
        throw LoadError(where(image.image_id, o.object_id) + ": mask cell outside its box");
    }
  }
  if (set == 0) throw LoadError(where(image.image_id, o.object_id) + ": empty mask");
}

}  // namespace

void validate_dataset(const Dataset& dataset) {
  if (dataset.num_categories < 1) throw LoadError("num_categories must be >= 1");
  std::set<int> image_ids;
  for (const auto& image : dataset.images) {
    if (!image_ids.insert(image.image_id).second)
      throw LoadError(where(image.image_id) + ": duplicate image id");
    if (image.width <= 0 || image.height <= 0)
      throw LoadError(where(image.image_id) + ": non-positive size");
    if (image.pixels.width() != image.width || image.pixels.height() != image.height)
      throw LoadError(where(image.image_id) + ": pixel grid size differs from declared size");
    for (double v : image.pixels.data())
      if (!(v >= 0.0 && v <= 1.0))
        throw LoadError(where(image.image_id) + ": pixel value outside [0,1]");
    std::set<int> object_ids;
    for (const auto& o : image.objects) {
      if (!object_ids.insert(o.object_id).second)
        throw LoadError(where(image.image_id, o.object_id) + ": duplicate object id");
      validate_object(image, o, dataset.num_categories);
    }
  }
}

// ---- JSON ingestion --------------------------------------------------------

namespace {

template <class T>
T required(const json& j, const char* key, const std::string& context) {
  if (!j.is_object() || !j.contains(key))
    throw LoadError(context + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw LoadError(context + ": field '" + key + "' has the wrong type (" + e.what() + ")");
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("parse failure in " + path.string() + ": " + e.what());
  }
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

BoundingBox clip_box(const BoundingBox& b, int width, int height) {
  const double x0 = std::max(0.0, b.left());
  const double y0 = std::max(0.0, b.top());
  const double x1 = std::min(static_cast<double>(width), b.right());
  const double y1 = std::min(static_cast<double>(height), b.bottom());
  return BoundingBox::from_corners(x0, y0, x1, y1);
}

ObjectAnnotation parse_object(const json& jo, const ImageRecord& image,
                              const std::map<int, int>& category_map) {
  const std::string ctx = where(image.image_id);
  const int id = required<int>(jo, "id", ctx + ", object");
  const std::string octx = where(image.image_id, id);
  ObjectAnnotation o;
  o.object_id = id;
  const int source_category = required<int>(jo, "category", octx);
  if (category_map.empty()) {
    o.category = source_category;
  } else {
    auto it = category_map.find(source_category);
    if (it == category_map.end())
      throw LoadError(octx + ": category " + std::to_string(source_category) +
                      " not declared in 'categories'");
    o.category = it->second;
  }
  const auto box = required<std::vector<double>>(jo, "box", octx);
  if (box.size() != 4) throw LoadError(octx + ": box must be [cx, cy, w, h]");
  o.box = {box[0], box[1], box[2], box[3]};
  if (!(o.box.width > 0.0) || !(o.box.height > 0.0))
    throw LoadError(octx + ": degenerate box (w<=0 or h<=0)");
  o.box = clip_box(o.box, image.width, image.height);
  if (!(o.box.width > 0.0) || !(o.box.height > 0.0))
    throw LoadError(octx + ": box degenerate after clipping to the image");
  o.ignore = jo.value("ignore", false);
  if (jo.contains("mask_rle") && !jo.at("mask_rle").is_null()) {
    const json& rle = jo.at("mask_rle");
    const auto size = required<std::vector<int>>(rle, "size", octx + " mask_rle");
    if (size.size() != 2 || size[0] != image.height || size[1] != image.width)
      throw LoadError(octx + ": mask_rle size must equal [height, width] of the image");
    const auto counts = required<std::vector<std::int64_t>>(rle, "counts", octx + " mask_rle");
    try {
      o.mask = Mask::from_rle(image.width, image.height, counts);
    } catch (const LoadError& e) {
      throw LoadError(octx + ": " + e.what());
    }
  }
  return o;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& path) {
  const json root = read_json_file(path);
  const auto base = path.parent_path();
  Dataset ds;
  ds.num_categories = required<int>(root, "num_categories", "dataset");
  if (ds.num_categories < 1) throw LoadError("dataset: num_categories must be >= 1");

  std::map<int, int> category_map;
  if (root.contains("categories")) {
    ds.source_category_ids = required<std::vector<int>>(root, "categories", "dataset");
    if (static_cast<int>(ds.source_category_ids.size()) != ds.num_categories)
      throw LoadError("dataset: 'categories' must list exactly num_categories ids");
    for (std::size_t i = 0; i < ds.source_category_ids.size(); ++i)
      if (!category_map.emplace(ds.source_category_ids[i], static_cast<int>(i) + 1).second)
        throw LoadError("dataset: duplicate id in 'categories'");
  }

  if (!root.contains("images") || !root.at("images").is_array())
    throw LoadError("dataset: missing array 'images'");
  for (const json& ji : root.at("images")) {
    ImageRecord image;
    image.image_id = required<int>(ji, "id", "image");
    const std::string ctx = where(image.image_id);
    image.width = required<int>(ji, "width", ctx);
    image.height = required<int>(ji, "height", ctx);
    if (image.width <= 0 || image.height <= 0) throw LoadError(ctx + ": non-positive size");
    if (ji.contains("pixels_path")) {
      image.pixels_path = required<std::string>(ji, "pixels_path", ctx);
      try {
        image.pixels = read_ppm(base / image.pixels_path);
      } catch (const LoadError& e) {
        throw LoadError(ctx + ": " + e.what());
      }
    } else if (ji.contains("pixels")) {
      const auto flat = required<std::vector<double>>(ji, "pixels", ctx);
      if (flat.size() != static_cast<std::size_t>(image.width) * image.height * 3)
        throw LoadError(ctx + ": inline pixels must hold width*height*3 values");
      image.pixels = Image(image.width, image.height);
      std::copy(flat.begin(), flat.end(), image.pixels.data().begin());
    } else {
      throw LoadError(ctx + ": needs 'pixels_path' or 'pixels'");
    }
    if (ji.contains("objects")) {
      if (!ji.at("objects").is_array()) throw LoadError(ctx + ": 'objects' must be an array");
      for (const json& jo : ji.at("objects"))
        image.objects.push_back(parse_object(jo, image, category_map));
    }
    ds.images.push_back(std::move(image));
  }
  validate_dataset(ds);
  return ds;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset,
                  const SaveOptions& options) {
  const auto base = path.parent_path();
  json root;
  root["num_categories"] = dataset.num_categories;
  if (!dataset.source_category_ids.empty()) root["categories"] = dataset.source_category_ids;
  auto source_id = [&](int category) {
    return dataset.source_category_ids.empty() ? category
                                               : dataset.source_category_ids[category - 1];
  };
  json images = json::array();
  for (const auto& image : dataset.images) {
    json ji;
    ji["id"] = image.image_id;
    ji["width"] = image.width;
    ji["height"] = image.height;
    if (!image.pixels_path.empty()) {
      ji["pixels_path"] = image.pixels_path;
      if (options.write_images) {
        const auto target = base / image.pixels_path;
        if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
        write_ppm(target, image.pixels);
      }
    } else {
      ji["pixels"] = std::vector<double>(image.pixels.data().begin(), image.pixels.data().end());
    }
    json objects = json::array();
    for (const auto& o : image.objects) {
      json jo;
      jo["id"] = o.object_id;
      jo["category"] = source_id(o.category);
      jo["box"] = {o.box.center_x, o.box.center_y, o.box.width, o.box.height};
      jo["ignore"] = o.ignore;
      if (o.mask) jo["mask_rle"] = {{"size", {o.mask->height(), o.mask->width()}},
                                    {"counts", o.mask->to_rle()}};
      objects.push_back(std::move(jo));
    }
    ji["objects"] = std::move(objects);
    images.push_back(std::move(ji));
  }
  root["images"] = std::move(images);
  write_json_file(path, root);
}

// ---- point files -------------------------------------------------------------

PointFile load_points(const std::filesystem::path& path) {
  const json root = read_json_file(path);
  PointFile file;
  file.sigma = required<double>(root, "sigma", "point file");
  file.seed = required<std::uint64_t>(root, "seed", "point file");
  if (!root.contains("points") || !root.at("points").is_array())
    throw LoadError("point file: missing array 'points'");
  for (const json& jp : root.at("points")) {
    PointRecord p;
    p.image_id = required<int>(jp, "image_id", "point");
    p.object_id = required<int>(jp, "object_id", "point");
    const std::string ctx = where(p.image_id, p.object_id);
    p.x = required<double>(jp, "x", ctx);
    p.y = required<double>(jp, "y", ctx);
    p.category = required<int>(jp, "category", ctx);
    p.fallback = jp.value("fallback", false);
    if (jp.contains("displacement")) p.displacement = required<double>(jp, "displacement", ctx);
    if (jp.contains("support_size")) p.support_size = required<int>(jp, "support_size", ctx);
    if (!std::isfinite(p.x) || !std::isfinite(p.y)) throw LoadError(ctx + ": non-finite point");
    file.points.push_back(p);
  }
  return file;
}

void save_points(const std::filesystem::path& path, const PointFile& file) {
  json root;
  root["sigma"] = file.sigma;
  root["seed"] = file.seed;
  json points = json::array();
  for (const auto& p : file.points) {
    json jp;
    jp["image_id"] = p.image_id;
    jp["object_id"] = p.object_id;
    jp["x"] = p.x;
    jp["y"] = p.y;
    jp["category"] = p.category;
    if (p.fallback) jp["fallback"] = true;
    if (p.displacement) jp["displacement"] = *p.displacement;
    if (p.support_size) jp["support_size"] = *p.support_size;
    points.push_back(std::move(jp));
  }
  root["points"] = std::move(points);
  write_json_file(path, root);
}

PointsByImage group_points(const PointFile& file) {
  PointsByImage out;
  for (const auto& p : file.points)
    out[p.image_id].push_back({{p.x, p.y}, p.category, p.object_id, p.fallback});
  return out;
}

PointFile make_point_file(const PointsByImage& points, double sigma, std::uint64_t seed) {
  PointFile file{sigma, seed, {}};
  for (const auto& [image_id, list] : points)
    for (const auto& p : list)
      file.points.push_back({image_id, p.object_id, p.position.x, p.position.y, p.category,
                             p.fallback, std::nullopt, std::nullopt});
  return file;
}

// ---- rectified Gaussian sampling ----------------------------------------------

namespace {

bool inside_object(const ObjectAnnotation& object, const Point2& p) {
  return object.mask ? object.mask->contains(p) : object.box.contains(p);
}

Point2 fallback_point(const ObjectAnnotation& object) {
  const Point2 mean = object.box.center();
  if (!object.mask || object.mask->contains(mean)) return mean;
  return object.mask->nearest_cell_center(mean);
}

}  // namespace

CoarsePoint sample_coarse_point(const ObjectAnnotation& object, double sigma,
                                std::uint64_t rng_seed) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma))
    throw InvalidArgument("sample_coarse_point: sigma must be finite and >= 0");
  if (object.ignore) throw InvalidArgument("sample_coarse_point: object is marked ignore");
  CoarsePoint out;
  out.category = object.category;
  out.object_id = object.object_id;

  const BoundingBox& b = object.box;
  if (sigma == 0.0) {
    out.position = fallback_point(object);
    out.fallback = !inside_object(object, b.center());
    return out;
  }
  Rng rng(rng_seed);
  for (int attempt = 0; attempt < kMaxRejectionRetries; ++attempt) {
    const double rx = rng.normal(0.0, sigma);
    const double ry = rng.normal(0.0, sigma);
    const Point2 p{b.center_x + rx * b.width, b.center_y + ry * b.height};
    if (inside_object(object, p)) {
      out.position = p;
      return out;
    }
  }
  out.position = fallback_point(object);
  out.fallback = true;
  return out;
}

PointsByImage sample_dataset_points(const Dataset& dataset, double sigma, std::uint64_t seed) {
  PointsByImage out;
  for (const auto& image : dataset.images) {
    auto& list = out[image.image_id];
    for (const auto& o : image.objects) {
      if (o.ignore) continue;
      const auto s = derive_seed({seed, static_cast<std::uint64_t>(image.image_id),
                                  static_cast<std::uint64_t>(o.object_id)});
      list.push_back(sample_coarse_point(o, sigma, s));
    }
  }
  return out;
}

}  // namespace cpr
