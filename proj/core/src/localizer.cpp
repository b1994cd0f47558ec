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

#include "cpr/localizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>

#include "config_json.hpp"
#include "cpr/error.hpp"
#include "cpr/rng.hpp"

namespace cpr {

void LocalizerConfig::validate() const {
  extractor.validate();
  if (extractor.stride > 4) throw InvalidArgument("localizer stride must be <= 4");
  if (!(positive_radius >= 0.0)) throw InvalidArgument("positive_radius must be >= 0");
  if (top_k < 1) throw InvalidArgument("top_k must be >= 1");
  if (!(score_threshold >= 0.0 && score_threshold <= 1.0))
    throw InvalidArgument("score_threshold must be in [0, 1]");
  if (!(nms_radius >= 0.0)) throw InvalidArgument("nms_radius must be >= 0");
  train.validate();
}

LocalizerModel LocalizerModel::create(int num_categories, const ExtractorConfig& config,
                                      std::uint64_t seed) {
  // Same initialization scheme as CPRNet; the ins head is simply dropped.
  CprModel base = CprModel::create(num_categories, config, seed);
  LocalizerModel m;
  m.num_categories = num_categories;
  m.extractor = std::move(base.extractor);
  m.cls = std::move(base.heads.cls);
  return m;
}

std::vector<std::span<double>> parameter_blocks(LocalizerModel& model) {
  std::vector<std::span<double>> out;
  for (auto& l : model.extractor.layers) {
    out.emplace_back(l.weight);
    out.emplace_back(l.bias);
  }
  out.emplace_back(model.cls.weight.data(), static_cast<std::size_t>(model.cls.weight.size()));
  out.emplace_back(model.cls.bias.data(), static_cast<std::size_t>(model.cls.bias.size()));
  return out;
}

std::vector<double> flatten_parameters(const LocalizerModel& model) {
  std::vector<double> out;
  auto& m = const_cast<LocalizerModel&>(model);
  for (auto block : parameter_blocks(m)) out.insert(out.end(), block.begin(), block.end());
  return out;
}

RowMatrix score_map(const LocalizerModel& model, const FeatureMap& map) {
  return sigmoid(model.cls.apply(map.values));
}

std::vector<Cell> positive_cells(const Point2& p, const MapExtent& extent, double radius, int top_k) {
  struct Candidate {
    double d2;
    int index;
    Cell cell;
  };
  std::vector<Candidate> candidates;
  const int x0 = std::max(0, static_cast<int>(std::floor(p.x - radius)));
  const int x1 = std::min(extent.width - 1, static_cast<int>(std::ceil(p.x + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(p.y - radius)));
  const int y1 = std::min(extent.height - 1, static_cast<int>(std::ceil(p.y + radius)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d2 = squared_distance(p, {static_cast<double>(x), static_cast<double>(y)});
      if (d2 <= radius * radius) candidates.push_back({d2, y * extent.width + x, {x, y}});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    return a.d2 != b.d2 ? a.d2 < b.d2 : a.index < b.index;
  });
  std::vector<Cell> out;
  for (std::size_t i = 0; i < candidates.size() && static_cast<int>(i) < top_k; ++i)
    out.push_back(candidates[i].cell);
  return out;
}

namespace {

struct LocalizerSample {
  FeatureMap map;
  ExtractorTrace trace;
  RowMatrix targets;  // h*w x K, entries in {0, 1}
  int positives = 0;
};

LocalizerSample make_sample(const LocalizerModel& model, const Image& pixels,
                            std::span<const CoarsePoint> points, const LocalizerConfig& cfg) {
  LocalizerSample s;
  s.map = extract_with_trace(model.extractor, pixels, s.trace);
  const MapExtent extent = extent_of(s.map);
  s.targets = RowMatrix::Zero(s.map.cell_count(), model.num_categories);
  for (const auto& p : points) {
    const Point2 u = clamp_to_extent(image_to_map(p.position, s.map.stride), extent);
    for (const auto& c : positive_cells(u, extent, cfg.positive_radius, cfg.top_k))
      s.targets(s.map.index(c.x, c.y), p.category - 1) = 1.0;
  }
  s.positives = static_cast<int>(s.targets.sum());
  return s;
}

// Focal loss over every cell and category, normalized by the positive count.
double localizer_loss(const LocalizerModel& model, const LocalizerSample& s, double gamma,
                      LinearHead& grad_head, RowMatrix* grad_map) {
  const RowMatrix logits = model.cls.apply(s.map.values);
  const double norm = 1.0 / std::max(1, s.positives);
  RowMatrix d_logit(logits.rows(), logits.cols());
  double loss = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    for (Eigen::Index k = 0; k < logits.cols(); ++k) {
      const double p = sigmoid(logits(i, k));
      const bool positive = s.targets(i, k) > 0.5;
      loss += positive ? focal_positive(p, gamma) : focal_negative(p, gamma);
      const double g = positive ? focal_positive_grad(p, gamma) : focal_negative_grad(p, gamma);
      d_logit(i, k) = norm * g * p * (1.0 - p);
    }
  }
  grad_head.weight.noalias() += d_logit.transpose() * s.map.values;
  grad_head.bias += d_logit.colwise().sum().transpose();
  if (grad_map) *grad_map = d_logit * model.cls.weight;
  return loss * norm;
}

std::vector<CoarsePoint> flipped(std::span<const CoarsePoint> points, int width) {
  std::vector<CoarsePoint> out(points.begin(), points.end());
  for (auto& p : out) p.position.x = width - p.position.x;
  return out;
}

}  // namespace

LocalizerTrainResult train_localizer(const Dataset& dataset, const PointsByImage& points,
                                     const LocalizerConfig& config) {
  config.validate();
  const TrainConfig& tc = config.train;
  LocalizerTrainResult result;
  LocalizerModel model =
      LocalizerModel::create(dataset.num_categories, config.extractor, derive_seed({tc.seed, 0x6c6f63ULL}));
  const bool conv = model.extractor.config.kind == ExtractorKind::kConv;

  std::vector<std::vector<CoarsePoint>> per_image;
  for (const auto& image : dataset.images) {
    auto it = points.find(image.image_id);
    per_image.push_back(it == points.end() ? std::vector<CoarsePoint>{} : it->second);
    for (const auto& p : per_image.back())
      if (p.category < 1 || p.category > dataset.num_categories)
        throw InvalidArgument("localizer: point category outside 1..K");
  }
  std::vector<std::optional<LocalizerSample>> cache(dataset.images.size() * 2);
  auto sample_for = [&](std::size_t i, bool flip) -> LocalizerSample {
    const auto& image = dataset.images[i];
    if (!conv) {
      auto& slot = cache[i * 2 + (flip ? 1 : 0)];
      if (!slot)
        slot = flip ? make_sample(model, image.pixels.flipped_horizontally(),
                                  flipped(per_image[i], image.width), config)
                    : make_sample(model, image.pixels, per_image[i], config);
      return *slot;
    }
    return flip ? make_sample(model, image.pixels.flipped_horizontally(),
                              flipped(per_image[i], image.width), config)
                : make_sample(model, image.pixels, per_image[i], config);
  };

  auto params = parameter_blocks(model);
  LocalizerModel velocity = model;
  for (auto block : parameter_blocks(velocity)) std::fill(block.begin(), block.end(), 0.0);

  std::vector<std::size_t> order(dataset.images.size());
  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    Rng rng(derive_seed({tc.seed, 0x6c6f63ULL, static_cast<std::uint64_t>(epoch)}));
    std::iota(order.begin(), order.end(), std::size_t{0});
    shuffle(order.begin(), order.end(), rng);
    const double lr = tc.learning_rate_at(epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t stop = std::min(order.size(), start + tc.batch_size);
      LocalizerModel grad = velocity;
      for (auto block : parameter_blocks(grad)) std::fill(block.begin(), block.end(), 0.0);
      for (std::size_t b = start; b < stop; ++b) {
        const bool flip = tc.horizontal_flip && rng.uniform() < 0.5;
        const LocalizerSample s = sample_for(order[b], flip);
        RowMatrix grad_map;
        const double loss = localizer_loss(model, s, tc.gamma, grad.cls, conv ? &grad_map : nullptr);
        if (!std::isfinite(loss))
          throw TrainingDiverged(epoch, static_cast<int>(order[b]),
                                 "localizer: non-finite loss at epoch " + std::to_string(epoch) +
                                     ", image index " + std::to_string(order[b]));
        epoch_loss += loss;
        if (conv) {
          const auto layer_grads = extractor_backward(model.extractor, s.trace, grad_map);
          for (std::size_t l = 0; l < layer_grads.size(); ++l) {
            auto& gl = grad.extractor.layers[l];
            for (std::size_t i = 0; i < gl.weight.size(); ++i) gl.weight[i] += layer_grads[l].weight[i];
            for (std::size_t i = 0; i < gl.bias.size(); ++i) gl.bias[i] += layer_grads[l].bias[i];
          }
        }
      }
      const double scale = 1.0 / static_cast<double>(stop - start);
      auto grads = parameter_blocks(grad);
      auto vel = parameter_blocks(velocity);
      for (std::size_t k = 0; k < params.size(); ++k) {
        for (std::size_t i = 0; i < params[k].size(); ++i) {
          const double g = grads[k][i] * scale + tc.weight_decay * params[k][i];
          vel[k][i] = tc.momentum * vel[k][i] + g;
          params[k][i] -= lr * vel[k][i];
        }
      }
    }
    result.loss_trace.push_back(epoch_loss / std::max<std::size_t>(1, order.size()));
  }
  result.model = std::move(model);
  return result;
}

std::vector<PredictedPoint> point_nms(std::span<const PredictedPoint> points, double radius) {
  if (!(radius >= 0.0)) throw InvalidArgument("point_nms: radius must be >= 0");
  std::vector<PredictedPoint> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(), [](const PredictedPoint& a, const PredictedPoint& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.position != b.position) return a.position < b.position;
    return a.category < b.category;
  });
  std::vector<PredictedPoint> kept;
  for (const auto& p : sorted) {
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const PredictedPoint& q) {
      return q.category == p.category && distance(p.position, q.position) < radius;
    });
    if (!suppressed) kept.push_back(p);
  }
  return kept;
}

std::vector<PredictedPoint> predict_from_scores(const RowMatrix& scores, const MapExtent& extent,
                                                int stride, const LocalizerConfig& config) {
  std::vector<PredictedPoint> peaks;
  const int w = extent.width, h = extent.height;
  for (Eigen::Index k = 0; k < scores.cols(); ++k) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int idx = y * w + x;
        const double s = scores(idx, k);
        if (s < config.score_threshold) continue;
        bool is_max = true;
        for (int dy = -1; dy <= 1 && is_max; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
            const int nidx = ny * w + nx;
            const double ns = scores(nidx, k);
            if (ns > s || (ns == s && nidx < idx)) {
              is_max = false;
              break;
            }
          }
        }
        if (!is_max) continue;
        peaks.push_back({map_to_image({static_cast<double>(x), static_cast<double>(y)}, stride),
                         static_cast<int>(k) + 1, s});
      }
    }
  }
  return point_nms(peaks, config.nms_radius);
}

std::vector<PredictedPoint> predict_points(const LocalizerModel& model, const Image& image,
                                           const LocalizerConfig& config) {
  const FeatureMap map = model.extractor.extract(image);
  return predict_from_scores(score_map(model, map), extent_of(map), map.stride, config);
}

PredictionsByImage predict_dataset(const LocalizerModel& model, const Dataset& dataset,
                                   const LocalizerConfig& config) {
  PredictionsByImage out;
  for (const auto& image : dataset.images) out[image.image_id] = predict_points(model, image.pixels, config);
  return out;
}

void save_localizer(const std::filesystem::path& path, const LocalizerModel& model,
                    const LocalizerConfig& config) {
  detail::json j;
  j["format"] = "cprlite-checkpoint";
  j["version"] = 1;
  j["kind"] = "localizer";
  j["num_categories"] = model.num_categories;
  j["extractor"] = detail::to_json(model.extractor.config);
  j["train_config"] = detail::to_json(config.train);
  j["localizer"] = {{"positive_radius", config.positive_radius},
                    {"top_k", config.top_k},
                    {"score_threshold", config.score_threshold},
                    {"nms_radius", config.nms_radius}};
  j["heads"] = {{"affine", true}, {"cls", detail::to_json(model.cls)}};
  j["conv_layers"] = detail::to_json(model.extractor.layers);
  detail::write_json(path, j);
}

LocalizerModel load_localizer(const std::filesystem::path& path) {
  const auto j = detail::read_json(path);
  try {
    if (j.at("format").get<std::string>() != "cprlite-checkpoint" || j.at("version").get<int>() != 1 ||
        j.at("kind").get<std::string>() != "localizer")
      throw LoadError("not a version-1 localizer checkpoint: " + path.string());
    LocalizerModel m;
    m.num_categories = j.at("num_categories").get<int>();
    m.extractor = Extractor::create(detail::extractor_from_json(j.at("extractor")));
    m.cls = detail::head_from_json(j.at("heads").at("cls"), m.num_categories, m.extractor.channels(), "cls");
    m.extractor.layers = detail::conv_from_json(j.at("conv_layers"), m.extractor);
    return m;
  } catch (const detail::json::exception& e) {
    throw LoadError("malformed localizer checkpoint " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw LoadError("invalid localizer checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace cpr
