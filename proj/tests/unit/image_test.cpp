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

#include <gtest/gtest.h>

#include "cpr/error.hpp"
#include "cpr/geometry.hpp"
#include "cpr/image.hpp"
#include "support/oracles.hpp"

namespace cpr {
namespace {

TEST(Image, PpmRoundTripOfQuantizedImage) {
  testing::TempDir dir("ppm");
  Image img(5, 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) img.set_rgb(r, c, {r / 2.0, c / 4.0, 0.3});
  img = quantize_8bit(img);
  write_ppm(dir.path() / "a.ppm", img);
  EXPECT_EQ(read_ppm(dir.path() / "a.ppm"), img);
}

TEST(Image, PpmHeaderAndBytes) {
  testing::TempDir dir("ppm_bytes");
  Image img(2, 1);
  img.set_rgb(0, 0, {1.0, 0.0, 0.0});
  img.set_rgb(0, 1, {0.0, 1.0, 1.0});
  write_ppm(dir.path() / "b.ppm", img);
  const std::string bytes = testing::slurp(dir.path() / "b.ppm");
  EXPECT_EQ(bytes, std::string("P6\n2 1\n255\n") + std::string("\xff\x00\x00\x00\xff\xff", 6));
}

TEST(Image, ReadPpmRejectsGarbage) {
  testing::TempDir dir("ppm_bad");
  std::ofstream(dir.path() / "c.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_ppm(dir.path() / "c.ppm"), LoadError);
  EXPECT_THROW(read_ppm(dir.path() / "missing.ppm"), LoadError);
}

TEST(Image, HorizontalFlip) {
  Image img(3, 1);
  img.set_rgb(0, 0, {0.1, 0.1, 0.1});
  img.set_rgb(0, 2, {0.9, 0.9, 0.9});
  const Image f = img.flipped_horizontally();
  EXPECT_EQ(f.at(0, 0, 0), 0.9);
  EXPECT_EQ(f.at(0, 2, 1), 0.1);
  EXPECT_EQ(f.flipped_horizontally(), img);
}

TEST(Image, PgmScaling) {
  testing::TempDir dir("pgm");
  const std::vector<double> v{0.0, 0.5, 1.0, 2.0};
  write_pgm(dir.path() / "h.pgm", 2, 2, v, 1.0);
  const std::string bytes = testing::slurp(dir.path() / "h.pgm");
  EXPECT_EQ(bytes, std::string("P5\n2 2\n255\n") + std::string("\x00\x80\xff\xff", 4));
}

TEST(BoundingBox, ClosedContainment) {
  const auto b = BoundingBox::from_corners(1, 2, 5, 4);
  EXPECT_EQ(b.center(), (Point2{3, 3}));
  EXPECT_TRUE(b.contains({1, 2}));
  EXPECT_TRUE(b.contains({5, 4}));
  EXPECT_FALSE(b.contains({5.0001, 3}));
}

}  // namespace
}  // namespace cpr
