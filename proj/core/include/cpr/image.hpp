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
#include <span>
#include <vector>

namespace cpr {

// Row-major H x W x 3 image with channel values in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return data_.empty(); }

  double& at(int row, int col, int channel) {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * 3 + channel];
  }
  double at(int row, int col, int channel) const {
    return data_[(static_cast<std::size_t>(row) * width_ + col) * 3 + channel];
  }
  void set_rgb(int row, int col, const std::array<double, 3>& rgb);

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  // Horizontally mirrored copy.
  Image flipped_horizontally() const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> data_;
};

// Binary PPM (P6, maxval 255). Values are quantized with round(v * 255).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

// Binary PGM (P5) of a row-major grid scaled so that `max_value` maps to 255.
void write_pgm(const std::filesystem::path& path, int width, int height,
               std::span<const double> values, double max_value);

// Quantizes every channel to the 8-bit grid used by PPM files.
Image quantize_8bit(const Image& image);

}  // namespace cpr
