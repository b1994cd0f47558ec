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

// Internal JSON helpers shared by the checkpoint readers and writers.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cpr/error.hpp"
#include "cpr/model.hpp"
#include "json.hpp"

namespace cpr::detail {

using nlohmann::json;

inline json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError("parse failure in " + path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline json to_json(const ExtractorConfig& c) {
  return {{"kind", to_string(c.kind)},     {"stride", c.stride},
          {"context_radii", c.context_radii}, {"conv_layers", c.conv_layers},
          {"conv_width", c.conv_width},     {"channels", c.channels}};
}

inline ExtractorConfig extractor_from_json(const json& j) {
  ExtractorConfig c;
  c.kind = extractor_kind_from_string(j.at("kind").get<std::string>());
  c.stride = j.at("stride").get<int>();
  c.context_radii = j.at("context_radii").get<std::vector<int>>();
  c.conv_layers = j.at("conv_layers").get<int>();
  c.conv_width = j.at("conv_width").get<int>();
  c.channels = j.at("channels").get<int>();
  c.validate();
  return c;
}

inline json to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"lr_decay_epochs", c.lr_decay_epochs},
          {"decay_factor", c.decay_factor},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"radius", c.radius},
          {"u0", c.u0},
          {"region", c.region.shape == RegionShape::kCircle ? "circle" : "rectangle"},
          {"aspect_ratio", c.region.aspect_ratio},
          {"gamma", c.gamma},
          {"alpha_ann", c.alpha_ann},
          {"alpha_neg", c.alpha_neg},
          {"horizontal_flip", c.horizontal_flip}};
}

inline json to_json(const LinearHead& head) {
  std::vector<double> w(static_cast<std::size_t>(head.weight.size()));
  for (Eigen::Index r = 0; r < head.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < head.weight.cols(); ++c)
      w[static_cast<std::size_t>(r * head.weight.cols() + c)] = head.weight(r, c);
  return {{"rows", head.weight.rows()},
          {"cols", head.weight.cols()},
          {"weight", w},
          {"bias", std::vector<double>(head.bias.data(), head.bias.data() + head.bias.size())}};
}

inline LinearHead head_from_json(const json& j, int rows, int cols, const std::string& name) {
  if (j.at("rows").get<int>() != rows || j.at("cols").get<int>() != cols)
    throw LoadError("checkpoint: head '" + name + "' has unexpected shape");
  const auto w = j.at("weight").get<std::vector<double>>();
  const auto b = j.at("bias").get<std::vector<double>>();
  if (w.size() != static_cast<std::size_t>(rows) * cols || b.size() != static_cast<std::size_t>(rows))
    throw LoadError("checkpoint: head '" + name + "' has the wrong number of values");
  LinearHead head(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) head.weight(r, c) = w[static_cast<std::size_t>(r) * cols + c];
  for (int r = 0; r < rows; ++r) head.bias(r) = b[r];
  return head;
}

inline json to_json(const std::vector<ConvLayer>& layers) {
  json arr = json::array();
  for (const auto& l : layers)
    arr.push_back({{"in", l.in_channels}, {"out", l.out_channels}, {"weight", l.weight},
                   {"bias", l.bias}});
  return arr;
}

inline std::vector<ConvLayer> conv_from_json(const json& arr, const Extractor& shape) {
  if (arr.size() != shape.layers.size())
    throw LoadError("checkpoint: conv layer count does not match the extractor config");
  std::vector<ConvLayer> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    ConvLayer l(arr[i].at("in").get<int>(), arr[i].at("out").get<int>());
    l.weight = arr[i].at("weight").get<std::vector<double>>();
    l.bias = arr[i].at("bias").get<std::vector<double>>();
    const auto& ref = shape.layers[i];
    if (l.in_channels != ref.in_channels || l.out_channels != ref.out_channels ||
        l.weight.size() != ref.weight.size() || l.bias.size() != ref.bias.size())
      throw LoadError("checkpoint: conv layer " + std::to_string(i) + " has unexpected shape");
    out.push_back(std::move(l));
  }
  return out;
}

inline void check_finite(std::span<const double> values, const char* what) {
  for (double v : values)
    if (!std::isfinite(v)) throw LoadError(std::string("checkpoint: non-finite value in ") + what);
}

}  // namespace cpr::detail
