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

#include "cpr/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "config_json.hpp"
#include "cpr/error.hpp"
#include "cpr/rng.hpp"

namespace cpr {

// ---- configuration -----------------------------------------------------------

std::string to_string(ExtractorKind kind) {
  return kind == ExtractorKind::kFixed ? "fixed" : "conv";
}

ExtractorKind extractor_kind_from_string(const std::string& name) {
  if (name == "fixed") return ExtractorKind::kFixed;
  if (name == "conv") return ExtractorKind::kConv;
  throw InvalidArgument("unknown extractor kind '" + name + "' (expected fixed or conv)");
}

int ExtractorConfig::feature_channels() const {
  if (kind == ExtractorKind::kFixed) return 7 + 3 * static_cast<int>(context_radii.size());
  return channels;
}

void ExtractorConfig::validate() const {
  if (stride != 1 && stride != 2 && stride != 4 && stride != 8)
    throw InvalidArgument("extractor stride must be one of 1, 2, 4, 8");
  if (kind == ExtractorKind::kFixed) {
    for (int r : context_radii)
      if (r < 1) throw InvalidArgument("context radii must be >= 1");
  } else {
    if (conv_layers < 1) throw InvalidArgument("conv extractor needs at least one layer");
    if (conv_width < 1) throw InvalidArgument("conv width must be >= 1");
  }
  if (feature_channels() < 4) throw InvalidArgument("feature dimension d must be >= 4");
}

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must be in [0, 1)");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (radius < 1 || u0 < 1) throw InvalidArgument("R and u0 must be >= 1");
  if (!(alpha_ann >= 0.0 && alpha_neg >= 0.0)) throw InvalidArgument("loss weights must be >= 0");
  if (!(gamma >= 0.0)) throw InvalidArgument("gamma must be >= 0");
}

double TrainConfig::learning_rate_at(int epoch) const {
  double lr = learning_rate;
  for (int d : lr_decay_epochs)
    if (epoch > d) lr *= decay_factor;
  return lr;
}

// ---- extractor ---------------------------------------------------------------

ConvLayer::ConvLayer(int in, int out)
    : in_channels(in), out_channels(out),
      weight(static_cast<std::size_t>(in) * out * 9, 0.0), bias(static_cast<std::size_t>(out), 0.0) {}

Extractor Extractor::create(const ExtractorConfig& config) {
  config.validate();
  Extractor e;
  e.config = config;
  if (config.kind == ExtractorKind::kConv) {
    int in = 3;
    for (int l = 0; l < config.conv_layers; ++l) {
      const int out = l + 1 == config.conv_layers ? config.channels : config.conv_width;
      e.layers.emplace_back(in, out);
      in = out;
    }
  }
  return e;
}

namespace {

struct GridShape {
  int h;
  int w;
};

GridShape map_shape(const Image& image, int stride) {
  if (image.width() < stride || image.height() < stride)
    throw InvalidArgument("image smaller than one stride cell");
  return {(image.height() + stride - 1) / stride, (image.width() + stride - 1) / stride};
}

// Mean colour per cell, CHW layout (3 x h x w).
std::vector<double> pooled_rgb(const Image& image, int stride, GridShape g) {
  std::vector<double> out(static_cast<std::size_t>(3) * g.h * g.w, 0.0);
  for (int cy = 0; cy < g.h; ++cy) {
    for (int cx = 0; cx < g.w; ++cx) {
      const int r0 = cy * stride, r1 = std::min(r0 + stride, image.height());
      const int c0 = cx * stride, c1 = std::min(c0 + stride, image.width());
      const double n = static_cast<double>((r1 - r0) * (c1 - c0));
      for (int ch = 0; ch < 3; ++ch) {
        double s = 0.0;
        for (int r = r0; r < r1; ++r)
          for (int c = c0; c < c1; ++c) s += image.at(r, c, ch);
        out[(static_cast<std::size_t>(ch) * g.h + cy) * g.w + cx] = s / n;
      }
    }
  }
  return out;
}

FeatureMap extract_fixed(const ExtractorConfig& cfg, const Image& image) {
  const int s = cfg.stride;
  const GridShape g = map_shape(image, s);
  const int H = image.height(), W = image.width();
  FeatureMap map(g.h, g.w, cfg.feature_channels(), s);

  // Luminance gradient magnitude by clamped central differences.
  std::vector<double> lum(static_cast<std::size_t>(H) * W);
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c)
      lum[static_cast<std::size_t>(r) * W + c] =
          (image.at(r, c, 0) + image.at(r, c, 1) + image.at(r, c, 2)) / 3.0;
  auto L = [&](int r, int c) {
    r = std::clamp(r, 0, H - 1);
    c = std::clamp(c, 0, W - 1);
    return lum[static_cast<std::size_t>(r) * W + c];
  };

  for (int cy = 0; cy < g.h; ++cy) {
    for (int cx = 0; cx < g.w; ++cx) {
      const int r0 = cy * s, r1 = std::min(r0 + s, H);
      const int c0 = cx * s, c1 = std::min(c0 + s, W);
      const double n = static_cast<double>((r1 - r0) * (c1 - c0));
      double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0}, grad = 0.0;
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          for (int ch = 0; ch < 3; ++ch) {
            const double v = image.at(r, c, ch);
            sum[ch] += v;
            sq[ch] += v * v;
          }
          const double gx = 0.5 * (L(r, c + 1) - L(r, c - 1));
          const double gy = 0.5 * (L(r + 1, c) - L(r - 1, c));
          grad += std::sqrt(gx * gx + gy * gy);
        }
      }
      auto cell = map.cell(cx, cy);
      for (int ch = 0; ch < 3; ++ch) {
        const double mean = sum[ch] / n;
        cell(ch) = mean;
        cell(3 + ch) = std::max(0.0, sq[ch] / n - mean * mean);
      }
      cell(6) = grad / n;
    }
  }

  // Context channels: box means of the per-cell colour over clipped windows,
  // computed from a summed-area table.
  if (!cfg.context_radii.empty()) {
    const int h = g.h, w = g.w;
    std::vector<double> sat(static_cast<std::size_t>(3) * (h + 1) * (w + 1), 0.0);
    auto S = [&](int ch, int y, int x) -> double& {
      return sat[(static_cast<std::size_t>(ch) * (h + 1) + y) * (w + 1) + x];
    };
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          S(ch, y + 1, x + 1) = map.cell(x, y)(ch) + S(ch, y, x + 1) + S(ch, y + 1, x) - S(ch, y, x);
    for (std::size_t ri = 0; ri < cfg.context_radii.size(); ++ri) {
      const int rad = cfg.context_radii[ri];
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int y0 = std::max(0, y - rad), y1 = std::min(h, y + rad + 1);
          const int x0 = std::max(0, x - rad), x1 = std::min(w, x + rad + 1);
          const double n = static_cast<double>((y1 - y0) * (x1 - x0));
          for (int ch = 0; ch < 3; ++ch) {
            const double total = S(ch, y1, x1) - S(ch, y0, x1) - S(ch, y1, x0) + S(ch, y0, x0);
            map.cell(x, y)(7 + 3 * static_cast<int>(ri) + ch) = total / n;
          }
        }
      }
    }
  }
  return map;
}

// One conv+ReLU layer on CHW data.
std::vector<double> conv_forward(const ConvLayer& layer, const std::vector<double>& in, int h, int w) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> out(plane * layer.out_channels, 0.0);
  for (int o = 0; o < layer.out_channels; ++o) {
    double* dst = out.data() + o * plane;
    std::fill(dst, dst + plane, layer.bias[o]);
    for (int i = 0; i < layer.in_channels; ++i) {
      const double* src = in.data() + i * plane;
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const double wv = layer.w(o, i, ky, kx);
          if (wv == 0.0) continue;
          const int dy = ky - 1, dx = kx - 1;
          for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
            const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
            double* drow = dst + static_cast<std::size_t>(y) * w;
            for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) drow[x] += wv * srow[x];
          }
        }
      }
    }
  }
  for (double& v : out) v = std::max(0.0, v);
  return out;
}

}  // namespace

FeatureMap extract_with_trace(const Extractor& extractor, const Image& image, ExtractorTrace& trace) {
  const auto& cfg = extractor.config;
  if (cfg.kind == ExtractorKind::kFixed) {
    trace = {};
    return extract_fixed(cfg, image);
  }
  const GridShape g = map_shape(image, cfg.stride);
  trace.height = g.h;
  trace.width = g.w;
  trace.activations.clear();
  trace.activations.push_back(pooled_rgb(image, cfg.stride, g));
  for (const auto& layer : extractor.layers)
    trace.activations.push_back(conv_forward(layer, trace.activations.back(), g.h, g.w));
  const auto& last = trace.activations.back();
  FeatureMap map(g.h, g.w, cfg.channels, cfg.stride);
  const std::size_t plane = static_cast<std::size_t>(g.h) * g.w;
  for (int c = 0; c < cfg.channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) map.values(static_cast<Eigen::Index>(p), c) = last[c * plane + p];
  return map;
}

FeatureMap Extractor::extract(const Image& image) const {
  ExtractorTrace trace;
  return extract_with_trace(*this, image, trace);
}

std::vector<ConvLayer> extractor_backward(const Extractor& extractor, const ExtractorTrace& trace,
                                          const RowMatrix& grad_map) {
  std::vector<ConvLayer> grads;
  for (const auto& l : extractor.layers) grads.emplace_back(l.in_channels, l.out_channels);
  if (extractor.layers.empty()) return grads;
  const int h = trace.height, w = trace.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int d = extractor.config.channels;
  if (grad_map.rows() != static_cast<Eigen::Index>(plane) || grad_map.cols() != d)
    throw InvalidArgument("extractor_backward: gradient shape differs from the feature map");

  std::vector<double> g(plane * d);
  for (int c = 0; c < d; ++c)
    for (std::size_t p = 0; p < plane; ++p) g[c * plane + p] = grad_map(static_cast<Eigen::Index>(p), c);

  for (int l = static_cast<int>(extractor.layers.size()) - 1; l >= 0; --l) {
    const ConvLayer& layer = extractor.layers[l];
    ConvLayer& gl = grads[l];
    const auto& in = trace.activations[l];
    const auto& out = trace.activations[l + 1];
    for (std::size_t k = 0; k < g.size(); ++k)
      if (out[k] <= 0.0) g[k] = 0.0;
    std::vector<double> gin(plane * layer.in_channels, 0.0);
    for (int o = 0; o < layer.out_channels; ++o) {
      const double* go = g.data() + o * plane;
      double bsum = 0.0;
      for (std::size_t p = 0; p < plane; ++p) bsum += go[p];
      gl.bias[o] += bsum;
      for (int i = 0; i < layer.in_channels; ++i) {
        const double* src = in.data() + i * plane;
        double* gsrc = gin.data() + i * plane;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int dy = ky - 1, dx = kx - 1;
            const double wv = layer.w(o, i, ky, kx);
            double acc = 0.0;
            for (int y = std::max(0, -dy); y < std::min(h, h - dy); ++y) {
              const double* srow = src + static_cast<std::size_t>(y + dy) * w + dx;
              double* grow = gsrc + static_cast<std::size_t>(y + dy) * w + dx;
              const double* gorow = go + static_cast<std::size_t>(y) * w;
              for (int x = std::max(0, -dx); x < std::min(w, w - dx); ++x) {
                acc += gorow[x] * srow[x];
                grow[x] += gorow[x] * wv;
              }
            }
            gl.w(o, i, ky, kx) += acc;
          }
        }
      }
    }
    g = std::move(gin);
  }
  return grads;
}

// ---- model -------------------------------------------------------------------

CprModel CprModel::create(int num_categories, const ExtractorConfig& config, std::uint64_t seed) {
  if (num_categories < 1 || num_categories > 32)
    throw InvalidArgument("num_categories must be in 1..32");
  CprModel m;
  m.num_categories = num_categories;
  m.extractor = Extractor::create(config);
  const int d = m.extractor.channels();
  Rng rng(derive_seed({seed, 0x6d6f64656cULL}));
  for (auto& layer : m.extractor.layers) {
    const double limit = std::sqrt(6.0 / (layer.in_channels * 9.0));
    for (double& v : layer.weight) v = rng.uniform(-limit, limit);
  }
  const double limit = 1.0 / std::sqrt(static_cast<double>(d));
  m.heads.cls = LinearHead(num_categories, d);
  m.heads.ins = LinearHead(num_categories, d);
  for (auto* head : {&m.heads.cls, &m.heads.ins})
    for (Eigen::Index i = 0; i < head->weight.size(); ++i)
      head->weight.data()[i] = rng.uniform(-limit, limit);
  m.heads.cls.bias.setConstant(-2.0);
  return m;
}

namespace {

template <class Model, class Span>
std::vector<Span> blocks_of(Model& m) {
  std::vector<Span> out;
  for (auto& l : m.extractor.layers) {
    out.emplace_back(l.weight.data(), l.weight.size());
    out.emplace_back(l.bias.data(), l.bias.size());
  }
  for (auto* head : {&m.heads.cls, &m.heads.ins}) {
    out.emplace_back(head->weight.data(), static_cast<std::size_t>(head->weight.size()));
    out.emplace_back(head->bias.data(), static_cast<std::size_t>(head->bias.size()));
  }
  return out;
}

}  // namespace

std::vector<std::span<double>> parameter_blocks(CprModel& model) {
  return blocks_of<CprModel, std::span<double>>(model);
}

std::vector<std::span<const double>> parameter_blocks(const CprModel& model) {
  return blocks_of<const CprModel, std::span<const double>>(model);
}

std::vector<double> flatten_parameters(const CprModel& model) {
  std::vector<double> out;
  for (auto block : parameter_blocks(model)) out.insert(out.end(), block.begin(), block.end());
  return out;
}

FeatureMap extract_features(const CprModel& model, const ImageRecord& image) {
  return model.extractor.extract(image.pixels);
}

Eigen::VectorXd score_point(const CprModel& model, const FeatureMap& map, const Point2& p) {
  return sigmoid(model.heads.cls.apply_one(bilinear_sample(map, p)));
}

// ---- sampling an image ---------------------------------------------------------

ImageSamples sample_image(const MapExtent& extent, int stride, std::span<const CoarsePoint> points,
                          int num_categories, const TrainConfig& config) {
  ImageSamples s;
  for (const auto& p : points) {
    const Point2 a = clamp_to_extent(image_to_map(p.position, stride), extent);
    s.annotations.push_back(a);
    PointBag bag = bag_sampling(a, config.radius, config.u0, extent, config.region, p.category);
    if (bag.points.empty()) bag.points.push_back({a, 0});
    s.bags.push_back(std::move(bag));
  }
  std::vector<std::uint32_t> mask(static_cast<std::size_t>(extent.width) * extent.height, 0);
  for (int k = 1; k <= num_categories; ++k) {
    std::vector<Point2> same;
    for (std::size_t j = 0; j < points.size(); ++j)
      if (points[j].category == k) same.push_back(s.annotations[j]);
    const auto neg = neg_sampling(same, k, config.radius, extent);
    for (const auto& c : neg.cells)
      mask[static_cast<std::size_t>(c.y) * extent.width + c.x] |= 1u << (k - 1);
  }
  for (int y = 0; y < extent.height; ++y) {
    for (int x = 0; x < extent.width; ++x) {
      const auto m = mask[static_cast<std::size_t>(y) * extent.width + x];
      if (m == 0) continue;
      s.negative_cells.push_back({x, y});
      s.negative_categories.push_back(m);
    }
  }
  return s;
}

LossInputs gather_loss_inputs(const FeatureMap& map, const ImageSamples& samples,
                              std::span<const CoarsePoint> points, int num_categories) {
  LossInputs in;
  in.num_categories = num_categories;
  const int d = map.channels;
  for (std::size_t j = 0; j < samples.bags.size(); ++j) {
    const auto& bag = samples.bags[j];
    BagInput b;
    b.category = points[j].category;
    b.features.resize(static_cast<Eigen::Index>(bag.points.size()), d);
    for (std::size_t i = 0; i < bag.points.size(); ++i)
      b.features.row(static_cast<Eigen::Index>(i)) = bilinear_sample(map, bag.points[i].position).transpose();
    in.bags.push_back(std::move(b));
  }
  in.annotation_features.resize(static_cast<Eigen::Index>(samples.annotations.size()), d);
  for (std::size_t j = 0; j < samples.annotations.size(); ++j)
    in.annotation_features.row(static_cast<Eigen::Index>(j)) =
        bilinear_sample(map, samples.annotations[j]).transpose();
  in.negative_features.resize(static_cast<Eigen::Index>(samples.negative_cells.size()), d);
  for (std::size_t i = 0; i < samples.negative_cells.size(); ++i) {
    const auto& c = samples.negative_cells[i];
    in.negative_features.row(static_cast<Eigen::Index>(i)) = map.cell(c.x, c.y);
  }
  in.negative_categories = samples.negative_categories;
  return in;
}

namespace {

CprModel zeros_like(const CprModel& model) {
  CprModel z = model;
  for (auto block : parameter_blocks(z)) std::fill(block.begin(), block.end(), 0.0);
  return z;
}

void add_head_gradients(CprModel& target, const HeadGradients& g) {
  target.heads.cls.weight += g.cls.weight;
  target.heads.cls.bias += g.cls.bias;
  target.heads.ins.weight += g.ins.weight;
  target.heads.ins.bias += g.ins.bias;
}

LossConfig loss_config(const TrainConfig& cfg, bool feature_gradients) {
  return {cfg.gamma, cfg.alpha_ann, cfg.alpha_neg, feature_gradients};
}

void check_points_inside(const ImageRecord& image, std::span<const CoarsePoint> points) {
  for (const auto& p : points)
    if (!(p.position.x >= 0 && p.position.y >= 0 && p.position.x <= image.width &&
          p.position.y <= image.height))
      throw InvalidArgument("image " + std::to_string(image.image_id) + ": point of object " +
                            std::to_string(p.object_id) + " lies outside the image");
}

}  // namespace

ImageGradient image_gradient(const CprModel& model, const ImageRecord& image,
                             std::span<const CoarsePoint> points, const TrainConfig& config) {
  const bool conv = model.extractor.config.kind == ExtractorKind::kConv;
  ExtractorTrace trace;
  const FeatureMap map = extract_with_trace(model.extractor, image.pixels, trace);
  const ImageSamples samples =
      sample_image(extent_of(map), map.stride, points, model.num_categories, config);
  const LossInputs inputs = gather_loss_inputs(map, samples, points, model.num_categories);

  ImageGradient out;
  out.loss = cpr_loss(model.heads, inputs, loss_config(config, conv));
  out.gradient = zeros_like(model);
  add_head_gradients(out.gradient, out.loss.heads);
  if (conv) {
    RowMatrix grad_map = RowMatrix::Zero(map.cell_count(), map.channels);
    for (std::size_t j = 0; j < samples.bags.size(); ++j) {
      const auto& bag = samples.bags[j];
      for (std::size_t i = 0; i < bag.points.size(); ++i)
        bilinear_scatter(bilinear_stencil(map, bag.points[i].position),
                         out.loss.bag_feature_grads[j].row(static_cast<Eigen::Index>(i)).transpose(),
                         grad_map);
      bilinear_scatter(bilinear_stencil(map, samples.annotations[j]),
                       out.loss.annotation_feature_grads.row(static_cast<Eigen::Index>(j)).transpose(),
                       grad_map);
    }
    for (std::size_t i = 0; i < samples.negative_cells.size(); ++i) {
      const auto& c = samples.negative_cells[i];
      grad_map.row(map.index(c.x, c.y)) += out.loss.negative_feature_grads.row(static_cast<Eigen::Index>(i));
    }
    out.gradient.extractor.layers = extractor_backward(model.extractor, trace, grad_map);
  }
  return out;
}

// ---- training ------------------------------------------------------------------

namespace {

std::vector<CoarsePoint> flip_points(std::span<const CoarsePoint> points, int width) {
  std::vector<CoarsePoint> out(points.begin(), points.end());
  for (auto& p : out) p.position.x = width - p.position.x;
  return out;
}

// Per-image inputs reused across epochs. For the fixed extractor the loss
// inputs never change, so they are built once per (image, flip).
class TrainingImages {
 public:
  TrainingImages(const Dataset& dataset, const PointsByImage& points, const CprModel& model,
                 const TrainConfig& config)
      : dataset_(dataset), model_(model), config_(config) {
    for (const auto& image : dataset.images) {
      auto it = points.find(image.image_id);
      std::vector<CoarsePoint> list = it == points.end() ? std::vector<CoarsePoint>{} : it->second;
      check_points_inside(image, list);
      points_.push_back(std::move(list));
    }
    cache_.resize(dataset.images.size() * 2);
  }

  std::size_t size() const { return dataset_.images.size(); }

  ImageGradient gradient(std::size_t index, bool flip) {
    const ImageRecord& image = dataset_.images[index];
    if (model_.extractor.config.kind == ExtractorKind::kFixed) {
      auto& slot = cache_[index * 2 + (flip ? 1 : 0)];
      if (!slot) {
        const Image pixels = flip ? image.pixels.flipped_horizontally() : image.pixels;
        const auto pts = flip ? flip_points(points_[index], image.width) : points_[index];
        const FeatureMap map = model_.extractor.extract(pixels);
        const auto samples = sample_image(extent_of(map), map.stride, pts, model_.num_categories, config_);
        slot = gather_loss_inputs(map, samples, pts, model_.num_categories);
      }
      ImageGradient out;
      out.loss = cpr_loss(model_.heads, *slot, loss_config(config_, false));
      out.gradient = zeros_like(model_);
      add_head_gradients(out.gradient, out.loss.heads);
      return out;
    }
    if (!flip) return image_gradient(model_, image, points_[index], config_);
    ImageRecord flipped = image;
    flipped.pixels = image.pixels.flipped_horizontally();
    return image_gradient(model_, flipped, flip_points(points_[index], image.width), config_);
  }

 private:
  const Dataset& dataset_;
  const CprModel& model_;
  const TrainConfig& config_;
  std::vector<std::vector<CoarsePoint>> points_;
  std::vector<std::optional<LossInputs>> cache_;
};

}  // namespace

TrainResult train_cprnet(const Dataset& dataset, const PointsByImage& points,
                         const TrainConfig& config, const ExtractorConfig& extractor,
                         const TrainObserver& observer) {
  return train_cprnet(CprModel::create(dataset.num_categories, extractor, config.seed), dataset,
                      points, config, observer);
}

TrainResult train_cprnet(CprModel model, const Dataset& dataset, const PointsByImage& points,
                         const TrainConfig& config, const TrainObserver& observer) {
  config.validate();
  if (model.num_categories != dataset.num_categories)
    throw InvalidArgument("model and dataset disagree on the number of categories");
  TrainResult result;
  TrainingImages images(dataset, points, model, config);
  CprModel velocity = zeros_like(model);

  std::vector<std::size_t> order(images.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    Rng rng(derive_seed({config.seed, 0x65706f6368ULL, static_cast<std::uint64_t>(epoch)}));
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    const double lr = config.learning_rate_at(epoch);
    EpochLoss sum{epoch};

    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(order.size(), start + config.batch_size);
      CprModel batch_grad = zeros_like(model);
      for (std::size_t b = start; b < stop; ++b) {
        const bool flip = config.horizontal_flip && rng.uniform() < 0.5;
        ImageGradient g = images.gradient(order[b], flip);
        if (!std::isfinite(g.loss.l_total))
          throw TrainingDiverged(epoch, static_cast<int>(order[b]),
                                 "non-finite loss at epoch " + std::to_string(epoch) + ", image index " +
                                     std::to_string(order[b]) + " (image id " +
                                     std::to_string(dataset.images[order[b]].image_id) + ")");
        sum.l_mil += g.loss.l_mil;
        sum.l_ann += g.loss.l_ann;
        sum.l_neg += g.loss.l_neg;
        sum.l_total += g.loss.l_total;
        auto dst = parameter_blocks(batch_grad);
        auto src = parameter_blocks(std::as_const(g.gradient));
        for (std::size_t k = 0; k < dst.size(); ++k)
          for (std::size_t i = 0; i < dst[k].size(); ++i) dst[k][i] += src[k][i];
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      auto params = parameter_blocks(model);
      auto grads = parameter_blocks(batch_grad);
      auto vel = parameter_blocks(velocity);
      for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].size(); ++i) {
          const double g = grads[k][i] * scale + config.weight_decay * params[k][i];
          vel[k][i] = config.momentum * vel[k][i] + g;
          params[k][i] -= lr * vel[k][i];
        }
      }
    }
    const double n = std::max<std::size_t>(1, order.size());
    sum.l_mil /= n;
    sum.l_ann /= n;
    sum.l_neg /= n;
    sum.l_total /= n;
    result.trace.push_back(sum);
    if (observer) observer(sum);
  }
  result.model = std::move(model);
  return result;
}

// ---- files ---------------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const CprModel& model,
                     const TrainConfig& config) {
  detail::json j;
  j["format"] = "cprlite-checkpoint";
  j["version"] = 1;
  j["kind"] = "cprnet";
  j["num_categories"] = model.num_categories;
  j["extractor"] = detail::to_json(model.extractor.config);
  j["train_config"] = detail::to_json(config);
  j["heads"] = {{"affine", true},
                {"cls", detail::to_json(model.heads.cls)},
                {"ins", detail::to_json(model.heads.ins)}};
  j["conv_layers"] = detail::to_json(model.extractor.layers);
  detail::write_json(path, j);
}

CprModel load_checkpoint(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  try {
    if (j.at("format").get<std::string>() != "cprlite-checkpoint" || j.at("version").get<int>() != 1 ||
        j.at("kind").get<std::string>() != "cprnet")
      throw LoadError("not a version-1 CPRNet checkpoint: " + path.string());
    CprModel m;
    m.num_categories = j.at("num_categories").get<int>();
    m.extractor = Extractor::create(detail::extractor_from_json(j.at("extractor")));
    const int d = m.extractor.channels();
    m.heads.cls = detail::head_from_json(j.at("heads").at("cls"), m.num_categories, d, "cls");
    m.heads.ins = detail::head_from_json(j.at("heads").at("ins"), m.num_categories, d, "ins");
    m.extractor.layers = detail::conv_from_json(j.at("conv_layers"), m.extractor);
    for (auto block : parameter_blocks(std::as_const(m))) detail::check_finite(block, "parameters");
    return m;
  } catch (const detail::json::exception& e) {
    throw LoadError("malformed checkpoint " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw LoadError("invalid checkpoint " + path.string() + ": " + e.what());
  }
}

void write_loss_trace(const std::filesystem::path& path, std::span<const EpochLoss> trace) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "epoch,l_mil,l_ann,l_neg,l_total\n";
  out << std::setprecision(17);
  for (const auto& e : trace)
    out << e.epoch << ',' << e.l_mil << ',' << e.l_ann << ',' << e.l_neg << ',' << e.l_total << '\n';
}

}  // namespace cpr
