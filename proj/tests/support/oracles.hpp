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

// Independent reference implementations used as test oracles. None of these
// call into the library routine they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <random>
#include <unistd.h>
#include <string>
#include <vector>

#include "cpr/dataset.hpp"
#include "cpr/eval.hpp"
#include "cpr/sampling.hpp"

namespace cpr::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("cprlite_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Truncated N(0, sigma^2) on [-1/2, 1/2] by direct rejection with
// std::normal_distribution.
inline std::vector<double> truncated_normal_samples(double sigma, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, sigma);
  std::vector<double> out;
  out.reserve(n);
  while (out.size() < n) {
    const double v = normal(gen);
    if (v >= -0.5 && v <= 0.5) out.push_back(v);
  }
  return out;
}

inline double population_variance(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return var / static_cast<double>(v.size());
}

// Two-sample Kolmogorov-Smirnov statistic.
inline double ks_statistic(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double v = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= v) ++i;
    while (j < b.size() && b[j] <= v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  return d;
}

// Critical value of the two-sample KS test at alpha = 0.01.
inline double ks_critical_001(std::size_t n, std::size_t m) {
  return 1.628 * std::sqrt(static_cast<double>(n + m) / (static_cast<double>(n) * m));
}

// Bilinear interpolation written from the textbook formula.
inline std::vector<double> bilinear_oracle(const FeatureMap& map, double x, double y) {
  const int x0 = std::min(static_cast<int>(std::floor(x)), map.width - 1);
  const int y0 = std::min(static_cast<int>(std::floor(y)), map.height - 1);
  const int x1 = std::min(x0 + 1, map.width - 1);
  const int y1 = std::min(y0 + 1, map.height - 1);
  const double fx = x - x0, fy = y - y0;
  std::vector<double> out(map.channels);
  for (int c = 0; c < map.channels; ++c) {
    const double q00 = map.values(y0 * map.width + x0, c);
    const double q10 = map.values(y0 * map.width + x1, c);
    const double q01 = map.values(y1 * map.width + x0, c);
    const double q11 = map.values(y1 * map.width + x1, c);
    out[c] = q00 * (1 - fx) * (1 - fy) + q10 * fx * (1 - fy) + q01 * (1 - fx) * fy + q11 * fx * fy;
  }
  return out;
}

// Enumerates every assignment of predictions to {FP, ignore-absorbed, object}
// and keeps those satisfying the matching rules stated declaratively:
//  - each non-ignore object is taken at most once;
//  - walking predictions by descending score (ties by index), a prediction
//    that takes a non-ignore object takes the nearest one (ties by index)
//    among same-category objects within tau not taken by an earlier
//    prediction;
//  - a prediction is absorbed only when no such object is left but an ignore
//    object of its category lies within tau (the nearest, ties by index);
//  - otherwise it is a false positive.
// Returns every valid ledger; a correct rule set admits exactly one.
inline std::vector<MatchLedger> brute_force_ledgers(const std::vector<PredictedPoint>& preds,
                                                    const std::vector<ObjectAnnotation>& gts,
                                                    double tau) {
  const std::size_t n = preds.size(), m = gts.size();
  auto dist = [&](std::size_t p, std::size_t g) {
    const double dx = (preds[p].position.x - gts[g].box.center_x) / gts[g].box.width;
    const double dy = (preds[p].position.y - gts[g].box.center_y) / gts[g].box.height;
    return std::sqrt(dx * dx + dy * dy);
  };
  auto eligible = [&](std::size_t p, std::size_t g) {
    return gts[g].category == preds[p].category && dist(p, g) <= tau;
  };
  // rank[p] = position of p in descending-score order, ties by index.
  std::vector<std::size_t> rank(n);
  for (std::size_t p = 0; p < n; ++p) {
    std::size_t r = 0;
    for (std::size_t q = 0; q < n; ++q)
      if (preds[q].score > preds[p].score || (preds[q].score == preds[p].score && q < p)) ++r;
    rank[p] = r;
  }
  // Choice per prediction: -1 = FP, g in [0, m) = object g.
  std::vector<MatchLedger> valid;
  std::vector<int> choice(n, -1);
  const std::size_t options = m + 1;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= options;
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      choice[i] = static_cast<int>(c % options) - 1;
      c /= options;
    }
    bool ok = true;
    for (std::size_t p = 0; p < n && ok; ++p) {
      auto taken_before = [&](std::size_t g) {
        for (std::size_t q = 0; q < n; ++q)
          if (rank[q] < rank[p] && choice[q] == static_cast<int>(g) && !gts[g].ignore) return true;
        return false;
      };
      std::optional<std::size_t> nearest_free, nearest_ignore;
      for (std::size_t g = 0; g < m; ++g) {
        if (!eligible(p, g)) continue;
        if (gts[g].ignore) {
          if (!nearest_ignore || dist(p, g) < dist(p, *nearest_ignore)) nearest_ignore = g;
        } else if (!taken_before(g)) {
          if (!nearest_free || dist(p, g) < dist(p, *nearest_free)) nearest_free = g;
        }
      }
      const int expect = nearest_free    ? static_cast<int>(*nearest_free)
                         : nearest_ignore ? static_cast<int>(*nearest_ignore)
                                          : -1;
      ok = choice[p] == expect;
    }
    if (!ok) continue;
    MatchLedger ledger;
    ledger.gt_matched.assign(m, false);
    for (std::size_t p = 0; p < n; ++p) {
      PredictionOutcome o;
      if (choice[p] < 0) {
        o = {Outcome::kFalsePositive, -1};
      } else if (gts[choice[p]].ignore) {
        o = {Outcome::kIgnored, choice[p]};
      } else {
        o = {Outcome::kTruePositive, choice[p]};
        ledger.gt_matched[choice[p]] = true;
      }
      ledger.predictions.push_back(o);
    }
    valid.push_back(ledger);
  }
  return valid;
}

// AP as a sum over true positives of (1 / num_gt) times the best precision
// over every cutoff at or beyond that TP, each precision counted from scratch.
inline double brute_force_ap(std::vector<RankedEntry> entries, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::stable_sort(entries.begin(), entries.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.score > b.score; });
  double ap = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (!entries[i].true_positive) continue;
    double best = 0.0;
    for (std::size_t cut = i + 1; cut <= entries.size(); ++cut) {
      int tp = 0;
      for (std::size_t k = 0; k < cut; ++k) tp += entries[k].true_positive ? 1 : 0;
      best = std::max(best, static_cast<double>(tp) / static_cast<double>(cut));
    }
    ap += best / num_gt;
  }
  return ap;
}

}  // namespace cpr::testing
