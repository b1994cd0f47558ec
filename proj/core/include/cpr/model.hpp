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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/image.hpp"
#include "cpr/objective.hpp"
#include "cpr/sampling.hpp"

namespace cpr {

enum class ExtractorKind { kFixed, kConv };

std::string to_string(ExtractorKind kind);
ExtractorKind extractor_kind_from_string(const std::string& name);

struct ExtractorConfig {
  ExtractorKind kind = ExtractorKind::kFixed;
  int stride = 2;
  // Fixed kind: half-widths (in cells) of the box windows whose mean colour
  // is appended as context channels.
  std::vector<int> context_radii = {2, 4};
  // Conv kind: number of 3x3 conv+ReLU layers, hidden width and output width.
  int conv_layers = 3;
  int conv_width = 16;
  int channels = 16;

  // Feature dimensionality d produced by this configuration.
  int feature_channels() const;
  // Throws InvalidArgument when the configuration is unusable.
  void validate() const;
};

// 3x3 convolution, zero padding, followed by ReLU.
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  std::vector<double> weight;  // [out][in][3][3]
  std::vector<double> bias;    // [out]

  ConvLayer() = default;
  ConvLayer(int in, int out);
  double& w(int o, int i, int ky, int kx) { return weight[((o * in_channels + i) * 3 + ky) * 3 + kx]; }
  double w(int o, int i, int ky, int kx) const {
    return weight[((o * in_channels + i) * 3 + ky) * 3 + kx];
  }
};

// Image -> FeatureMap. Parameter-free for the fixed kind.
struct Extractor {
  ExtractorConfig config;
  std::vector<ConvLayer> layers;  // conv kind only

  static Extractor create(const ExtractorConfig& config);
  int channels() const { return config.feature_channels(); }
  FeatureMap extract(const Image& image) const;
};

// Activations retained by a conv forward pass for back-propagation.
struct ExtractorTrace {
  int height = 0;
  int width = 0;
  // inputs[l] is the CHW input of layer l; inputs.back() is the CHW output.
  std::vector<std::vector<double>> activations;
};

FeatureMap extract_with_trace(const Extractor& extractor, const Image& image,
                              ExtractorTrace& trace);

// Given dL/dF for the map produced by extract_with_trace, returns dL/d(layer
// parameters) with the same shapes as extractor.layers.
std::vector<ConvLayer> extractor_backward(const Extractor& extractor, const ExtractorTrace& trace,
                                          const RowMatrix& grad_map);

// Desk-scale CPRNet: feature extractor plus classification and instance
// selection heads.
struct CprModel {
  int num_categories = 1;
  Extractor extractor;
  Heads heads;

  // Heads: uniform(-1/sqrt(d), 1/sqrt(d)); cls bias -2; ins bias 0.
  // Conv layers: uniform(-sqrt(6/fan_in), sqrt(6/fan_in)); bias 0.
  static CprModel create(int num_categories, const ExtractorConfig& config, std::uint64_t seed);
};

// Visits every parameter array of a model in a fixed order.
std::vector<std::span<double>> parameter_blocks(CprModel& model);
std::vector<std::span<const double>> parameter_blocks(const CprModel& model);
std::vector<double> flatten_parameters(const CprModel& model);

FeatureMap extract_features(const CprModel& model, const ImageRecord& image);

struct TrainConfig {
  int epochs = 12;
  double learning_rate = 0.005;
  std::vector<int> lr_decay_epochs = {8, 11};
  double decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int batch_size = 1;
  std::uint64_t seed = 0;
  int radius = 8;
  int u0 = 8;
  SampleRegion region;
  double gamma = 2.0;
  double alpha_ann = 0.5;
  double alpha_neg = 3.0;
  bool horizontal_flip = false;

  void validate() const;
  // Learning rate in effect during `epoch` (1-based).
  double learning_rate_at(int epoch) const;
};

struct EpochLoss {
  int epoch = 0;
  double l_mil = 0.0;
  double l_ann = 0.0;
  double l_neg = 0.0;
  double l_total = 0.0;
};

struct TrainResult {
  CprModel model;
  std::vector<EpochLoss> trace;
};

// Builds the objective inputs of one image: bags around each annotated point,
// annotated-point features and the per-category negative cells.
struct ImageSamples {
  std::vector<PointBag> bags;
  std::vector<Point2> annotations;  // map coordinates, clamped into the extent
  std::vector<Cell> negative_cells;
  std::vector<std::uint32_t> negative_categories;
};

ImageSamples sample_image(const MapExtent& extent, int stride, std::span<const CoarsePoint> points,
                          int num_categories, const TrainConfig& config);

LossInputs gather_loss_inputs(const FeatureMap& map, const ImageSamples& samples,
                              std::span<const CoarsePoint> points, int num_categories);

// Loss and gradients of one image with respect to every model parameter.
struct ImageGradient {
  LossBreakdown loss;
  CprModel gradient;  // same shapes as the model
};

ImageGradient image_gradient(const CprModel& model, const ImageRecord& image,
                             std::span<const CoarsePoint> points, const TrainConfig& config);

using TrainObserver = std::function<void(const EpochLoss&)>;

// SGD with momentum over shuffled images. Throws TrainingDiverged on a
// non-finite loss.
TrainResult train_cprnet(const Dataset& dataset, const PointsByImage& points,
                         const TrainConfig& config, const ExtractorConfig& extractor,
                         const TrainObserver& observer = {});

// Continues training from an existing model.
TrainResult train_cprnet(CprModel model, const Dataset& dataset, const PointsByImage& points,
                         const TrainConfig& config, const TrainObserver& observer = {});

// sigmoid(cls head applied to the bilinear feature at map point p).
Eigen::VectorXd score_point(const CprModel& model, const FeatureMap& map, const Point2& p);

// ---- files -----------------------------------------------------------------

void save_checkpoint(const std::filesystem::path& path, const CprModel& model,
                     const TrainConfig& config);
CprModel load_checkpoint(const std::filesystem::path& path);

void write_loss_trace(const std::filesystem::path& path, std::span<const EpochLoss> trace);

}  // namespace cpr
