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

#include "cpr/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "cpr/error.hpp"

namespace cpr {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

// Reads the next whitespace-delimited header token, skipping '#' comments.
std::string next_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) return token;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

}  // namespace

Image::Image(int width, int height, double fill)
    : width_(width), height_(height),
      data_(static_cast<std::size_t>(width) * height * 3, fill) {
  if (width < 0 || height < 0) throw InvalidArgument("negative image size");
}

void Image::set_rgb(int row, int col, const std::array<double, 3>& rgb) {
  for (int c = 0; c < 3; ++c) at(row, col, c) = rgb[c];
}

Image Image::flipped_horizontally() const {
  Image out(width_, height_);
  for (int r = 0; r < height_; ++r)
    for (int c = 0; c < width_; ++c)
      for (int ch = 0; ch < 3; ++ch) out.at(r, c, ch) = at(r, width_ - 1 - c, ch);
  return out;
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open PPM file " + path.string());
  if (next_token(in) != "P6") throw LoadError("not a binary PPM (P6): " + path.string());
  int width = 0, height = 0, maxval = 0;
  try {
    width = std::stoi(next_token(in));
    height = std::stoi(next_token(in));
    maxval = std::stoi(next_token(in));
  } catch (const std::exception&) {
    throw LoadError("malformed PPM header: " + path.string());
  }
  if (width <= 0 || height <= 0 || maxval != 255)
    throw LoadError("unsupported PPM geometry or maxval in " + path.string());
  std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw LoadError("truncated PPM payload: " + path.string());
  Image image(width, height);
  auto data = image.data();
  for (std::size_t i = 0; i < bytes.size(); ++i) data[i] = bytes[i] / 255.0;
  return image;
}

void write_ppm(const std::filesystem::path& path, const Image& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write PPM file " + path.string());
  out << "P6\n" << image.width() << ' ' << image.height() << "\n255\n";
  std::vector<unsigned char> bytes(image.data().size());
  std::transform(image.data().begin(), image.data().end(), bytes.begin(), to_byte);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_pgm(const std::filesystem::path& path, int width, int height,
               std::span<const double> values, double max_value) {
  if (values.size() != static_cast<std::size_t>(width) * height)
    throw InvalidArgument("PGM value count does not match geometry");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write PGM file " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  const double scale = max_value > 0.0 ? 1.0 / max_value : 0.0;
  for (double v : values) out.put(static_cast<char>(to_byte(v * scale)));
}

Image quantize_8bit(const Image& image) {
  Image out = image;
  for (double& v : out.data()) v = to_byte(v) / 255.0;
  return out;
}

}  // namespace cpr
