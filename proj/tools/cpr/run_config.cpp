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

#include "cpr/run_config.hpp"

#include <array>
#include <fstream>
#include <type_traits>

#include "json.hpp"

namespace cpr::tools {

using nlohmann::json;

void RunConfig::finalize() {
  cpr_train.radius = radius;
  cpr_train.u0 = u0;
  cpr_train.region = region;
  refine.radius = radius;
  refine.u0 = u0;
  refine.region = region;
  try {
    scene.validate();
    if (train_images < 0 || eval_images < 0) throw InvalidArgument("image counts must be >= 0");
    if (!(sigma >= 0.0)) throw InvalidArgument("sigma must be >= 0");
    if (region.shape == RegionShape::kRectangle && !(region.aspect_ratio > 0.0))
      throw InvalidArgument("aspect_ratio must be > 0");
    cpr_extractor.validate();
    cpr_train.validate();
    refine.validate();
    localizer.validate();
    if (taus.empty()) throw InvalidArgument("eval.taus must not be empty");
    for (double t : taus)
      if (!(t > 0.0)) throw InvalidArgument("eval.taus must be positive");
    if (heatmap_bins < 1) throw InvalidArgument("eval.heatmap_bins must be >= 1");
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

namespace {

std::string region_name(RegionShape s) { return s == RegionShape::kCircle ? "circle" : "rectangle"; }

RegionShape region_from_name(const std::string& s) {
  if (s == "circle") return RegionShape::kCircle;
  if (s == "rectangle") return RegionShape::kRectangle;
  throw ConfigError("unknown region '" + s + "' (expected circle or rectangle)");
}

json schedule_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"learning_rate", t.learning_rate},
          {"lr_decay_epochs", t.lr_decay_epochs},
          {"decay_factor", t.decay_factor},
          {"momentum", t.momentum},
          {"weight_decay", t.weight_decay},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"gamma", t.gamma},
          {"horizontal_flip", t.horizontal_flip}};
}

json extractor_json(const ExtractorConfig& c) {
  return {{"kind", to_string(c.kind)},     {"stride", c.stride},         {"context_radii", c.context_radii},
          {"conv_layers", c.conv_layers}, {"conv_width", c.conv_width}, {"channels", c.channels}};
}

json to_json(const RunConfig& c) {
  json categories = json::array();
  for (const auto& s : c.scene.categories)
    categories.push_back({{"color", s.color}, {"shape", to_string(s.shape)}});
  json cpr_train = schedule_json(c.cpr_train);
  cpr_train["alpha_ann"] = c.cpr_train.alpha_ann;
  cpr_train["alpha_neg"] = c.cpr_train.alpha_neg;
  return {
      {"workspace", c.workspace.generic_string()},
      {"scene",
       {{"width", c.scene.width},
        {"height", c.scene.height},
        {"train_images", c.train_images},
        {"eval_images", c.eval_images},
        {"categories", categories},
        {"background", c.scene.background},
        {"min_objects", c.scene.min_objects},
        {"max_objects", c.scene.max_objects},
        {"min_size", c.scene.min_size},
        {"max_size", c.scene.max_size},
        {"overlap", c.scene.overlap == OverlapPolicy::kAllow ? "allow" : "none"},
        {"placement_retries", c.scene.placement_retries},
        {"noise_std", c.scene.noise_std},
        {"seed", c.scene.seed}}},
      {"annotate", {{"sigma", c.sigma}, {"seed", c.annotate_seed}}},
      {"sampling",
       {{"radius", c.radius}, {"u0", c.u0}, {"region", region_name(c.region.shape)},
        {"aspect_ratio", c.region.aspect_ratio}}},
      {"cpr", {{"extractor", extractor_json(c.cpr_extractor)}, {"train", cpr_train}}},
      {"refine",
       {{"delta1", c.refine.delta1},
        {"delta2", c.refine.delta2},
        {"score_constraint", c.refine.score_constraint},
        {"class_constraint", c.refine.class_constraint},
        {"nearest_constraint", c.refine.nearest_constraint}}},
      {"localizer",
       {{"extractor", extractor_json(c.localizer.extractor)},
        {"positive_radius", c.localizer.positive_radius},
        {"top_k", c.localizer.top_k},
        {"score_threshold", c.localizer.score_threshold},
        {"nms_radius", c.localizer.nms_radius},
        {"train", schedule_json(c.localizer.train)}}},
      {"eval", {{"taus", c.taus}, {"heatmap_bins", c.heatmap_bins}}}};
}

// Strict typed read: integers must be integral, booleans must be booleans.
template <typename T>
void read(const json& j, const std::string& path, T& out) {
  const bool ok = [&] {
    if constexpr (std::is_same_v<T, bool>) return j.is_boolean();
    else if constexpr (std::is_integral_v<T>) return j.is_number_integer() || j.is_number_unsigned();
    else if constexpr (std::is_floating_point_v<T>) return j.is_number();
    else if constexpr (std::is_same_v<T, std::string>) return j.is_string();
    else if constexpr (std::is_same_v<T, std::array<double, 3>>) return j.is_array() && j.size() == 3;
    else return j.is_array();
  }();
  if (!ok) throw ConfigError("config key '" + path + "' has the wrong type");
  try {
    out = j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + path + "' has the wrong type");
  }
}

void read_schedule(const json& j, const std::string& p, TrainConfig& t) {
  read(j.at("epochs"), p + ".epochs", t.epochs);
  read(j.at("learning_rate"), p + ".learning_rate", t.learning_rate);
  read(j.at("lr_decay_epochs"), p + ".lr_decay_epochs", t.lr_decay_epochs);
  read(j.at("decay_factor"), p + ".decay_factor", t.decay_factor);
  read(j.at("momentum"), p + ".momentum", t.momentum);
  read(j.at("weight_decay"), p + ".weight_decay", t.weight_decay);
  read(j.at("batch_size"), p + ".batch_size", t.batch_size);
  read(j.at("seed"), p + ".seed", t.seed);
  read(j.at("gamma"), p + ".gamma", t.gamma);
  read(j.at("horizontal_flip"), p + ".horizontal_flip", t.horizontal_flip);
}

void read_extractor(const json& j, const std::string& p, ExtractorConfig& c) {
  std::string kind;
  read(j.at("kind"), p + ".kind", kind);
  try {
    c.kind = extractor_kind_from_string(kind);
  } catch (const InvalidArgument& e) {
    throw ConfigError(p + ".kind: " + e.what());
  }
  read(j.at("stride"), p + ".stride", c.stride);
  read(j.at("context_radii"), p + ".context_radii", c.context_radii);
  read(j.at("conv_layers"), p + ".conv_layers", c.conv_layers);
  read(j.at("conv_width"), p + ".conv_width", c.conv_width);
  read(j.at("channels"), p + ".channels", c.channels);
}

RunConfig from_json(const json& j) {
  RunConfig c;
  std::string workspace;
  read(j.at("workspace"), "workspace", workspace);
  c.workspace = workspace;

  const json& s = j.at("scene");
  read(s.at("width"), "scene.width", c.scene.width);
  read(s.at("height"), "scene.height", c.scene.height);
  read(s.at("train_images"), "scene.train_images", c.train_images);
  read(s.at("eval_images"), "scene.eval_images", c.eval_images);
  c.scene.categories.clear();
  const json& cats = s.at("categories");
  if (!cats.is_array()) throw ConfigError("config key 'scene.categories' must be an array");
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string p = "scene.categories[" + std::to_string(i) + "]";
    if (!cats[i].is_object()) throw ConfigError(p + " must be an object");
    for (const auto& [key, value] : cats[i].items())
      if (key != "color" && key != "shape") throw ConfigError("unknown config key '" + p + "." + key + "'");
    CategoryStyle style;
    std::string shape;
    read(cats[i].at("color"), p + ".color", style.color);
    read(cats[i].at("shape"), p + ".shape", shape);
    try {
      style.shape = shape_family_from_string(shape);
    } catch (const InvalidArgument& e) {
      throw ConfigError(p + ".shape: " + e.what());
    }
    c.scene.categories.push_back(style);
  }
  read(s.at("background"), "scene.background", c.scene.background);
  read(s.at("min_objects"), "scene.min_objects", c.scene.min_objects);
  read(s.at("max_objects"), "scene.max_objects", c.scene.max_objects);
  read(s.at("min_size"), "scene.min_size", c.scene.min_size);
  read(s.at("max_size"), "scene.max_size", c.scene.max_size);
  std::string overlap;
  read(s.at("overlap"), "scene.overlap", overlap);
  if (overlap == "allow") c.scene.overlap = OverlapPolicy::kAllow;
  else if (overlap == "none") c.scene.overlap = OverlapPolicy::kNoOverlap;
  else throw ConfigError("scene.overlap must be 'allow' or 'none'");
  read(s.at("placement_retries"), "scene.placement_retries", c.scene.placement_retries);
  read(s.at("noise_std"), "scene.noise_std", c.scene.noise_std);
  read(s.at("seed"), "scene.seed", c.scene.seed);

  read(j.at("annotate").at("sigma"), "annotate.sigma", c.sigma);
  read(j.at("annotate").at("seed"), "annotate.seed", c.annotate_seed);

  const json& sm = j.at("sampling");
  read(sm.at("radius"), "sampling.radius", c.radius);
  read(sm.at("u0"), "sampling.u0", c.u0);
  std::string region;
  read(sm.at("region"), "sampling.region", region);
  c.region.shape = region_from_name(region);
  read(sm.at("aspect_ratio"), "sampling.aspect_ratio", c.region.aspect_ratio);

  read_extractor(j.at("cpr").at("extractor"), "cpr.extractor", c.cpr_extractor);
  const json& ct = j.at("cpr").at("train");
  read_schedule(ct, "cpr.train", c.cpr_train);
  read(ct.at("alpha_ann"), "cpr.train.alpha_ann", c.cpr_train.alpha_ann);
  read(ct.at("alpha_neg"), "cpr.train.alpha_neg", c.cpr_train.alpha_neg);

  const json& r = j.at("refine");
  read(r.at("delta1"), "refine.delta1", c.refine.delta1);
  read(r.at("delta2"), "refine.delta2", c.refine.delta2);
  read(r.at("score_constraint"), "refine.score_constraint", c.refine.score_constraint);
  read(r.at("class_constraint"), "refine.class_constraint", c.refine.class_constraint);
  read(r.at("nearest_constraint"), "refine.nearest_constraint", c.refine.nearest_constraint);

  const json& l = j.at("localizer");
  read_extractor(l.at("extractor"), "localizer.extractor", c.localizer.extractor);
  read(l.at("positive_radius"), "localizer.positive_radius", c.localizer.positive_radius);
  read(l.at("top_k"), "localizer.top_k", c.localizer.top_k);
  read(l.at("score_threshold"), "localizer.score_threshold", c.localizer.score_threshold);
  read(l.at("nms_radius"), "localizer.nms_radius", c.localizer.nms_radius);
  read_schedule(l.at("train"), "localizer.train", c.localizer.train);

  read(j.at("eval").at("taus"), "eval.taus", c.taus);
  read(j.at("eval").at("heatmap_bins"), "eval.heatmap_bins", c.heatmap_bins);
  return c;
}

// Recursively overlays `patch` onto `base`; objects merge key by key and
// anything else is replaced. Keys absent from `base` are rejected.
void merge(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw ConfigError("config section '" + path + "' must be an object");
  for (const auto& [key, value] : patch.items()) {
    const std::string p = path.empty() ? key : path + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + p + "'");
    if (base[key].is_object()) merge(base[key], value, p);
    else base[key] = value;
  }
}

json override_patch(const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
  const std::string key = item.substr(0, eq);
  const std::string text = item.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  std::size_t end = key.size();
  while (true) {
    const auto dot = key.rfind('.', end - 1);
    const std::string part = key.substr(dot == std::string::npos ? 0 : dot + 1,
                                        end - (dot == std::string::npos ? 0 : dot + 1));
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty segment");
    patch = json{{part, patch}};
    if (dot == std::string::npos) break;
    end = dot;
  }
  return patch;
}

}  // namespace

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json merged = to_json(RunConfig{});
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config file " + file.string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file " + file.string() + " is not valid JSON");
    merge(merged, user, "");
    if (user.contains("workspace")) {
      std::filesystem::path ws = merged["workspace"].is_string() ? merged["workspace"].get<std::string>() : "";
      if (ws.is_relative()) merged["workspace"] = (file.parent_path() / ws).lexically_normal().generic_string();
    }
  }
  for (const auto& item : overrides) merge(merged, override_patch(item), "");
  RunConfig config;
  try {
    config = from_json(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  config.finalize();
  return config;
}

std::string dump_run_config(const RunConfig& config) {
  json j = to_json(config);
  j.erase("workspace");
  return j.dump(2);
}

}  // namespace cpr::tools
