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

// Acceptance checks. One PASS/FAIL line per criterion; exits 1 if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "cpr/dataset.hpp"
#include "cpr/eval.hpp"
#include "cpr/objective.hpp"
#include "cpr/pipeline.hpp"
#include "cpr/refine.hpp"
#include "cpr/rng.hpp"
#include "cpr/sampling.hpp"
#include "support/oracles.hpp"

namespace {

using namespace cpr;
namespace fs = std::filesystem;

// Tolerances and regression locks.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradStep = 1e-4;
constexpr int kGradTrials = 100;
constexpr double kBilinearTol = 1e-12;
constexpr double kSoftmaxTol = 1e-9;
constexpr int kEvalInstances = 1000;
constexpr std::size_t kKsSamples = 100000;
constexpr double kRsvRelTol = 0.02;
constexpr double kCentroidTol = 1e-9;

// Calibration on the pinned fixture: RSV 0.0521 -> 0.00064, oracle distance
// 4.595 -> 0.324 px, mAP@1 0.9369 -> 0.9697.
constexpr double kRsvRatioMax = 0.05;
constexpr double kRefinedDistanceMaxPx = 0.5;
constexpr double kDistanceGainMinPx = 4.0;
constexpr double kMapGapMin = 0.03;
constexpr double kRefinedMapMin = 0.95;

constexpr double kBudgetGradS = 10, kBudgetGeometryS = 5, kBudgetEvalS = 30, kBudgetPipelineS = 300;

struct Check {
  bool ok = true;
  std::ostringstream note;
  void expect(bool cond, const std::string& what) {
    if (!cond && ok) note << what;
    ok = ok && cond;
  }
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b)));
}

RowMatrix random_rows(int n, int d, Rng& rng) {
  RowMatrix m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

Heads random_heads(int K, int d, Rng& rng) {
  Heads h{LinearHead(K, d), LinearHead(K, d)};
  for (auto* head : {&h.cls, &h.ins}) {
    for (Eigen::Index i = 0; i < head->weight.size(); ++i) head->weight.data()[i] = rng.uniform(-1, 1);
    for (Eigen::Index i = 0; i < head->bias.size(); ++i) head->bias(i) = rng.uniform(-1, 1);
  }
  return h;
}

// ---- 1 ----

void gradients(Check& c) {
  Rng rng(101);
  const int K = 3, d = 4, negatives = 10;
  int compared = 0;
  double worst = 0;
  for (int trial = 0; trial < kGradTrials; ++trial) {
    Heads heads = random_heads(K, d, rng);
    LossInputs in;
    in.num_categories = K;
    for (int j = 0; j < 2; ++j)
      in.bags.push_back({random_rows(static_cast<int>(rng.uniform_int(1, 6)), d, rng),
                         static_cast<int>(rng.uniform_int(1, K))});
    in.annotation_features = random_rows(2, d, rng);
    in.negative_features = random_rows(negatives, d, rng);
    for (int p = 0; p < negatives; ++p)
      in.negative_categories.push_back(static_cast<std::uint32_t>(rng.uniform_int(0, (1 << K) - 1)));
    const LossConfig cfg;
    const LossBreakdown base = cpr_loss(heads, in, cfg);

    std::vector<std::pair<double*, double>> slots;
    auto add = [&](auto& mat, const auto& grad) {
      for (Eigen::Index i = 0; i < mat.size(); ++i) slots.push_back({mat.data() + i, grad.data()[i]});
    };
    add(heads.cls.weight, base.heads.cls.weight);
    add(heads.cls.bias, base.heads.cls.bias);
    add(heads.ins.weight, base.heads.ins.weight);
    add(heads.ins.bias, base.heads.ins.bias);
    for (int j = 0; j < 2; ++j) add(in.bags[j].features, base.bag_feature_grads[j]);
    add(in.annotation_features, base.annotation_feature_grads);
    add(in.negative_features, base.negative_feature_grads);
    for (auto [ptr, analytic] : slots) {
      const double keep = *ptr;
      *ptr = keep + kGradStep;
      const double up = cpr_loss(heads, in, cfg).l_total;
      *ptr = keep - kGradStep;
      const double dn = cpr_loss(heads, in, cfg).l_total;
      *ptr = keep;
      const double fd = (up - dn) / (2 * kGradStep);
      if (std::abs(fd) < 1e-7 && std::abs(analytic) < 1e-7) continue;
      ++compared;
      worst = std::max(worst, rel_err(analytic, fd));
    }
  }
  c.expect(worst < kGradRelTol, "max rel err " + std::to_string(worst));
  c.note << compared << " entries, max rel err " << worst;
}

// ---- 2 ----

void geometry(Check& c) {
  for (int R = 1; R <= 10; ++R)
    for (int u0 = 1; u0 <= 10; ++u0) {
      const MapExtent e{4 * R + 3, 4 * R + 3};
      const auto bag = bag_sampling({2.0 * R + 1, 2.0 * R + 1}, R, u0, e);
      c.expect(static_cast<int>(bag.points.size()) == u0 * R * (R + 1) / 2, "bag size");
    }
  c.expect(bag_sampling({40, 40}, 8, 8, {100, 100}).points.size() == 288, "288 at R=8, u0=8");

  Rng rng(202);
  for (int trial = 0; trial < 200; ++trial) {
    const MapExtent e{static_cast<int>(rng.uniform_int(1, 64)), static_cast<int>(rng.uniform_int(1, 64))};
    std::vector<Point2> anns;
    const int n = static_cast<int>(rng.uniform_int(0, 4));
    for (int i = 0; i < n; ++i) anns.push_back({rng.uniform(0, e.width), rng.uniform(0, e.height)});
    const double R = static_cast<double>(rng.uniform_int(1, 10));
    std::vector<Cell> brute;
    for (int y = 0; y < e.height; ++y)
      for (int x = 0; x < e.width; ++x) {
        bool far = true;
        for (const auto& a : anns) far = far && std::hypot(x - a.x, y - a.y) > R;
        if (far) brute.push_back({x, y});
      }
    c.expect(neg_sampling(anns, 1, R, e).cells == brute, "neg_sampling vs enumeration");
  }

  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int h = static_cast<int>(rng.uniform_int(1, 12)), w = static_cast<int>(rng.uniform_int(1, 12));
    FeatureMap map(h, w, 3, 1);
    for (Eigen::Index i = 0; i < map.values.size(); ++i) map.values.data()[i] = rng.uniform(-5, 5);
    const double x = rng.uniform(0, w - 1), y = rng.uniform(0, h - 1);
    const Eigen::VectorXd got = bilinear_sample(map, {x, y});
    const auto want = testing::bilinear_oracle(map, x, y);
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(got(k) - want[k]));
  }
  c.expect(worst <= kBilinearTol, "bilinear error " + std::to_string(worst));
  c.note << "bilinear max err " << worst;
}

// ---- 3 ----

void score_invariants(Check& c) {
  Rng rng(303);
  double worst_sum = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 40)), K = static_cast<int>(rng.uniform_int(1, 5));
    RowMatrix cls(n, K), ins(n, K);
    const double scale = rng.uniform(0.1, 30);
    for (Eigen::Index i = 0; i < cls.size(); ++i) {
      cls.data()[i] = rng.uniform(-scale, scale);
      ins.data()[i] = rng.uniform(-scale, scale);
    }
    const ScoreSet s = scores_from_logits(cls, ins);
    for (int k = 0; k < K; ++k) {
      worst_sum = std::max(worst_sum, std::abs(s.s_ins.col(k).sum() - 1.0));
      c.expect(s.s_bag(k) > 0.0 && s.s_bag(k) < 1.0, "bag score outside (0, 1)");
    }
    if (n == 1)
      for (int k = 0; k < K; ++k) c.expect(s.s_bag(k) == s.s_cls(0, k), "singleton identity");
  }
  for (int trial = 0; trial < 100; ++trial) {
    const Heads h = random_heads(3, 4, rng);
    const ScoreSet s = mil_scores(random_rows(1, 4, rng), h);
    for (int k = 0; k < 3; ++k) c.expect(s.s_bag(k) == s.s_cls(0, k), "singleton identity");
  }
  c.expect(worst_sum <= kSoftmaxTol, "softmax sum error");
  c.note << "max |sum - 1| " << worst_sum;
}

// ---- 4 ----

ObjectAnnotation box_object(double cx, double cy, double w, double h, int category, bool ignore, int id) {
  ObjectAnnotation o;
  o.object_id = id;
  o.category = category;
  o.box = {cx, cy, w, h};
  o.ignore = ignore;
  return o;
}

void eval_oracles(Check& c) {
  const BoundingBox b{10, 20, 4, 8};
  c.expect(point_box_distance({10, 20}, b) == 0.0, "distance 0");
  c.expect(point_box_distance({12, 24}, b) == std::sqrt(0.5), "distance sqrt(0.5)");
  c.expect(point_box_distance({14, 20}, b) == 1.0, "distance 1");

  Rng rng(404);
  int ignores = 0;
  for (int trial = 0; trial < kEvalInstances; ++trial) {
    const int n_pred = static_cast<int>(rng.uniform_int(0, 6)), n_gt = static_cast<int>(rng.uniform_int(0, 4));
    std::vector<ObjectAnnotation> gts;
    for (int g = 0; g < n_gt; ++g) {
      const bool ignore = rng.uniform() < 0.25;
      ignores += ignore;
      gts.push_back(box_object(rng.uniform(0, 30), rng.uniform(0, 30), rng.uniform(4, 16), rng.uniform(4, 16),
                               static_cast<int>(rng.uniform_int(1, 2)), ignore, g + 1));
    }
    std::vector<PredictedPoint> preds;
    for (int p = 0; p < n_pred; ++p)
      preds.push_back({{rng.uniform(0, 30), rng.uniform(0, 30)}, static_cast<int>(rng.uniform_int(1, 2)),
                       rng.uniform() < 0.3 ? 0.5 : rng.uniform()});
    const double tau = std::array{0.5, 1.0, 2.0}[trial % 3];
    const auto oracle = testing::brute_force_ledgers(preds, gts, tau);
    c.expect(oracle.size() == 1, "oracle not unique");
    if (oracle.size() != 1) continue;
    const MatchLedger got = match_predictions(preds, gts, tau);
    bool same = got.gt_matched == oracle[0].gt_matched && got.predictions.size() == oracle[0].predictions.size();
    for (std::size_t i = 0; same && i < got.predictions.size(); ++i)
      same = got.predictions[i].outcome == oracle[0].predictions[i].outcome &&
             got.predictions[i].object_index == oracle[0].predictions[i].object_index;
    c.expect(same, "match ledger differs at instance " + std::to_string(trial));

    std::vector<RankedEntry> entries;
    int num_gt = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) num_gt += !gts[g].ignore;
    for (std::size_t i = 0; i < preds.size(); ++i)
      if (got.predictions[i].outcome != Outcome::kIgnored)
        entries.push_back({preds[i].score, got.predictions[i].outcome == Outcome::kTruePositive});
    const double ap = average_precision(entries, num_gt);
    c.expect(std::abs(ap - testing::brute_force_ap(entries, num_gt)) < 1e-9,
             "AP differs at instance " + std::to_string(trial));
  }
  c.note << kEvalInstances << " instances, " << ignores << " ignore objects";
}

// ---- 5 ----

void annotation_distribution(Check& c) {
  ObjectAnnotation o = box_object(50, 50, 40, 20, 1, false, 1);
  std::vector<double> xs, ys;
  std::vector<PointObjectPair> pairs;
  for (std::size_t i = 0; i < kKsSamples; ++i) {
    const Point2 p = sample_coarse_point(o, 0.25, derive_seed({505, i})).position;
    xs.push_back((p.x - o.box.center_x) / o.box.width);
    ys.push_back((p.y - o.box.center_y) / o.box.height);
    pairs.push_back({p, o.box});
  }
  const auto ox = testing::truncated_normal_samples(0.25, kKsSamples, 1);
  const auto oy = testing::truncated_normal_samples(0.25, kKsSamples, 2);
  const double crit = testing::ks_critical_001(kKsSamples, kKsSamples);
  const double dx = testing::ks_statistic(xs, ox), dy = testing::ks_statistic(ys, oy);
  c.expect(dx < crit && dy < crit, "KS rejects");
  const double oracle = std::sqrt(testing::population_variance(ox) * testing::population_variance(oy));
  const double got = *rsv(pairs);
  c.expect(std::abs(got / oracle - 1.0) <= kRsvRelTol, "RSV off");
  char buf[160];
  std::snprintf(buf, sizeof buf, "KS D %.4f/%.4f (crit %.4f), RSV %.5f vs %.5f", dx, dy, crit, got, oracle);
  c.note << buf;
}

// ---- 6, 7, 8 ----

struct PipelineRuns {
  fs::path a, b;
  double seconds_a = 0;
};

PipelineRuns& pipeline_runs() {
  static testing::TempDir dir("acceptance");
  static PipelineRuns runs = [] {
    PipelineRuns r{dir.path() / "a", dir.path() / "b"};
    for (const auto& root : {r.a, r.b}) {
      tools::RunConfig cfg = tools::load_run_config({}, {});
      cfg.workspace = root;
      const auto t0 = std::chrono::steady_clock::now();
      tools::run_pipeline(cfg);
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (root == r.a) r.seconds_a = s;
    }
    return r;
  }();
  return runs;
}

void refinement(Check& c) {
  const tools::Layout l{pipeline_runs().a};
  const Dataset train = load_dataset(l.train_dataset());
  const OracleCenters centers = load_oracle_centers(l.train_oracle());
  const PointsByImage coarse = group_points(load_points(l.coarse_points()));
  const PointsByImage refined = group_points(load_points(l.refined_points()));
  c.expect(train.images.size() == 64, "fixture size");
  const double rc = *rsv(pair_with_objects(train, coarse)), rr = *rsv(pair_with_objects(train, refined));
  const double dc = tools::mean_oracle_distance(coarse, centers), dr = tools::mean_oracle_distance(refined, centers);
  c.expect(rr <= 0.5 * rc, "RSV(refined) > 0.5 RSV(coarse)");
  c.expect(rr <= kRsvRatioMax * rc, "RSV ratio above lock");
  c.expect(dr < dc, "refined not closer to centroids");
  c.expect(dr <= kRefinedDistanceMaxPx, "refined distance above lock");
  c.expect(dc - dr >= kDistanceGainMinPx, "distance gain below lock");
  c.expect(pipeline_runs().seconds_a < kBudgetPipelineS, "over budget");
  char buf[200];
  std::snprintf(buf, sizeof buf, "RSV %.5f -> %.6f (ratio %.4f), centroid distance %.3f -> %.3f px", rc, rr, rr / rc, dc,
                dr);
  c.note << buf;
}

void localization(Check& c) {
  const tools::Layout l{pipeline_runs().a};
  const Dataset eval = load_dataset(l.eval_dataset());
  c.expect(eval.images.size() == 16, "eval split size");
  const std::vector<double> tau{1.0};
  const double mc = evaluate_predictions(eval, load_predictions(l.predictions("coarse")), tau).taus[0].map;
  const double mr = evaluate_predictions(eval, load_predictions(l.predictions("refined")), tau).taus[0].map;
  c.expect(mr >= mc, "refined mAP below coarse");
  c.expect(mr - mc >= kMapGapMin, "gap below lock");
  c.expect(mr >= kRefinedMapMin, "refined mAP below lock");
  char buf[120];
  std::snprintf(buf, sizeof buf, "mAP@1 coarse %.4f refined %.4f (gap %.4f)", mc, mr, mr - mc);
  c.note << buf;
}

void determinism(Check& c) {
  const tools::Layout a{pipeline_runs().a}, b{pipeline_runs().b};
  std::vector<fs::path> files{a.coarse_points(), a.refined_points(), a.cpr_model(), a.cpr_loss()};
  for (const char* s : {"coarse", "refined"}) {
    files.push_back(a.predictions(s));
    files.push_back(a.localizer_model(s));
    files.push_back(a.eval_report(s));
  }
  for (const auto& f : files) {
    const fs::path other = b.root / f.lexically_relative(a.root);
    c.expect(fs::exists(f) && fs::exists(other), "missing " + f.string());
    c.expect(testing::slurp(f) == testing::slurp(other), "differs: " + f.lexically_relative(a.root).string());
  }
  c.note << files.size() << " artifacts byte-identical";
}

// ---- 9 ----

CprModel identity_model(int K) {
  CprModel m;
  m.num_categories = K;
  m.heads.cls = LinearHead(K, K);
  m.heads.cls.weight.setIdentity();
  m.heads.ins = LinearHead(K, K);
  return m;
}

void constraints(Check& c) {
  Rng rng(909);
  const int K = 3;
  const CprModel m = identity_model(K);
  double worst = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int stride = 1 << rng.uniform_int(0, 2);
    FeatureMap map(20, 24, K, stride);
    for (Eigen::Index i = 0; i < map.values.size(); ++i) map.values.data()[i] = rng.uniform(-3, 3);
    std::vector<CoarsePoint> pts;
    const int n = static_cast<int>(rng.uniform_int(1, 3));
    for (int i = 0; i < n; ++i)
      pts.push_back({map_to_image({rng.uniform(0, 23), rng.uniform(0, 19)}, stride),
                     static_cast<int>(rng.uniform_int(1, K)), i + 1});

    RefineConfig one;
    one.delta1 = 1;
    for (std::size_t i = 0; i < pts.size(); ++i)
      c.expect(refine_point(m, map, pts, i, one).position == pts[i].position, "delta1 = 1 moved a point");

    RefineConfig off;
    off.score_constraint = off.class_constraint = off.nearest_constraint = false;
    const int k = pts[0].category - 1;
    auto score = [&](const Point2& p) { return 1 / (1 + std::exp(-testing::bilinear_oracle(map, p.x, p.y)[k])); };
    const Point2 am = clamp_to_extent(image_to_map(pts[0].position, stride), {24, 20});
    double w = score(am), x = w * pts[0].position.x, y = w * pts[0].position.y;
    for (const auto& bp : bag_sampling(am, off.radius, off.u0, {24, 20}).points) {
      const double s = score(bp.position);
      const Point2 ip = map_to_image(bp.position, stride);
      w += s;
      x += s * ip.x;
      y += s * ip.y;
    }
    const Point2 got = refine_point(m, map, pts, 0, off).position;
    worst = std::max({worst, std::abs(got.x - x / w), std::abs(got.y - y / w)});

    for (int which = 0; which < 2; ++which) {
      std::size_t prev = SIZE_MAX;
      for (double d : {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0}) {
        RefineConfig cfg;
        (which == 0 ? cfg.delta1 : cfg.delta2) = d;
        (which == 0 ? cfg.delta2 : cfg.delta1) = 0;
        const std::size_t size = refine_point(m, map, pts, 0, cfg).support.size();
        c.expect(size <= prev, "support grew with a threshold");
        prev = size;
      }
    }
  }
  c.expect(worst <= kCentroidTol, "weighted centroid mismatch");
  c.note << "centroid max err " << worst;
}

struct Criterion {
  int id;
  const char* name;
  std::function<void(Check&)> run;
  double budget_s;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradients, kBudgetGradS},
      {2, "geometry oracles", geometry, kBudgetGeometryS},
      {3, "score invariants", score_invariants, 0},
      {4, "evaluation oracle equivalence", eval_oracles, kBudgetEvalS},
      {5, "annotation distribution", annotation_distribution, 0},
      {6, "end-to-end refinement", refinement, kBudgetPipelineS},
      {7, "differential localization", localization, kBudgetPipelineS},
      {8, "determinism", determinism, 0},
      {9, "constraint semantics", constraints, 0},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Check c;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(c);
    } catch (const std::exception& e) {
      c.ok = false;
      c.note << "exception: " << e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cr.budget_s > 0 && s >= cr.budget_s) {
      c.ok = false;
      c.note << " (over " << cr.budget_s << " s budget)";
    }
    failed += !c.ok;
    std::printf("%s criterion %d: %s [%.2f s] %s\n", c.ok ? "PASS" : "FAIL", cr.id, cr.name, s, c.note.str().c_str());
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
